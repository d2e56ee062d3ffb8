import { describe, expect, it } from "vitest";

import { buildRatingBody, canSubmit, emptyForm, setComment, setPhase, setScore } from "../src/form.js";
import { DIMENSIONS } from "../src/types.js";

function filledForm(bundleId = "b-1") {
  let state = emptyForm(bundleId);
  for (const [i, dimension] of DIMENSIONS.entries()) {
    state = setScore(state, dimension, (i % 5) + 1);
  }
  return state;
}

describe("rating form state", () => {
  it("cannot submit an empty form", () => {
    expect(canSubmit(emptyForm("b-1"))).toBe(false);
  });

  it("cannot submit with 7 of 8 dimensions set", () => {
    let state = emptyForm("b-1");
    for (const dimension of DIMENSIONS.slice(0, 7)) {
      state = setScore(state, dimension, 4);
    }
    expect(canSubmit(state)).toBe(false);
  });

  it("can submit once all 8 dimensions are set", () => {
    expect(canSubmit(filledForm())).toBe(true);
  });

  it("rejects values outside 1..5 and non-integers", () => {
    const state = emptyForm("b-1");
    expect(setScore(state, "Utility", 0)).toBe(state);
    expect(setScore(state, "Utility", 6)).toBe(state);
    expect(setScore(state, "Utility", 3.5)).toBe(state);
    expect(setScore(state, "Utility", Number.NaN)).toBe(state);
  });

  it("rejects unknown dimensions", () => {
    const state = emptyForm("b-1");
    expect(setScore(state, "Speed", 3)).toBe(state);
  });

  it("submitting or errored forms are not submittable until back to editing", () => {
    const state = filledForm();
    expect(canSubmit(setPhase(state, "submitting"))).toBe(false);
    expect(canSubmit(setPhase(state, "error", "boom"))).toBe(false);
    expect(canSubmit(setPhase(setPhase(state, "error", "boom"), "editing"))).toBe(true);
  });

  it("buildRatingBody throws when incomplete", () => {
    expect(() => buildRatingBody(emptyForm("b-1"), "tok")).toThrow(/not set/);
  });

  it("buildRatingBody carries ids, scores, and trimmed comment", () => {
    const state = setComment(filledForm("b-9"), "  looks right  ");
    const body = buildRatingBody(state, "tok-r1");
    expect(body.bundle_id).toBe("b-9");
    expect(body.rater_id).toBe("tok-r1");
    expect(Object.keys(body.scores)).toEqual([...DIMENSIONS]);
    expect(body.comment).toBe("looks right");
  });

  it("empty comment is omitted from the body", () => {
    const body = buildRatingBody(filledForm(), "tok");
    expect("comment" in body).toBe(false);
  });
});
