import { describe, expect, it } from "vitest";

import { seededOrder } from "../src/order.js";

const items = Array.from({ length: 12 }, (_, i) => `b-${i}`);

describe("per-rater presentation order", () => {
  it("is deterministic for the same token", () => {
    expect(seededOrder(items, "tok-r1")).toEqual(seededOrder(items, "tok-r1"));
  });

  it("is a permutation of the input", () => {
    const shuffled = seededOrder(items, "tok-r2");
    expect([...shuffled].sort()).toEqual([...items].sort());
    expect(shuffled).toHaveLength(items.length);
  });

  it("does not mutate the input", () => {
    const copy = [...items];
    seededOrder(items, "tok-r3");
    expect(items).toEqual(copy);
  });

  it("different tokens usually see different orders", () => {
    const orders = new Set(
      ["tok-a", "tok-b", "tok-c", "tok-d"].map((token) => seededOrder(items, token).join(",")),
    );
    expect(orders.size).toBeGreaterThan(1);
  });
});
