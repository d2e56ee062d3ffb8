import { ApiError, ReviewApi } from "./api.js";
import { RatingFormState, buildRatingBody, canSubmit, emptyForm, setComment, setPhase, setScore } from "./form.js";
import { seededOrder } from "./order.js";
import { renderBundle, renderDone, renderFatal, renderLoading, renderMissingToken } from "./render.js";
import { PendingBundle } from "./types.js";

interface AppState {
  phase: "loading" | "fatal" | "rating" | "done";
  queue: PendingBundle[];
  position: number;
  done: number;
  total: number;
  form: RatingFormState | null;
  fatalMessage: string;
}

function readParams(): { rater: string | null; apiBase: string } {
  const params = new URLSearchParams(window.location.search);
  return { rater: params.get("rater"), apiBase: params.get("api") ?? "" };
}

export function startApp(root: HTMLElement): void {
  const { rater, apiBase } = readParams();
  if (!rater) {
    root.innerHTML = renderMissingToken();
    return;
  }
  const api = new ReviewApi(apiBase);
  const state: AppState = { phase: "loading", queue: [], position: 0, done: 0, total: 0, form: null, fatalMessage: "" };

  function current(): PendingBundle | undefined {
    return state.queue[state.position];
  }

  function paint(): void {
    if (state.phase === "loading") {
      root.innerHTML = renderLoading();
    } else if (state.phase === "fatal") {
      root.innerHTML = renderFatal(state.fatalMessage);
    } else if (state.phase === "done") {
      root.innerHTML = renderDone(state.total);
    } else {
      const bundle = current();
      if (!bundle || !state.form) {
        state.phase = "done";
        root.innerHTML = renderDone(state.total);
        return;
      }
      root.innerHTML = renderBundle(bundle, state.form, state.done, state.total);
    }
  }

  function advance(): void {
    state.done += 1;
    state.position += 1;
    const bundle = current();
    if (bundle) {
      state.form = emptyForm(bundle.bundle_id);
    } else {
      state.phase = "done";
      state.form = null;
    }
    paint();
  }

  async function load(): Promise<void> {
    state.phase = "loading";
    paint();
    try {
      await api.session(); // liveness + future use of anchors/dimensions
      const pending = await api.pending(rater as string);
      state.queue = seededOrder(pending.pending, rater as string);
      state.position = 0;
      state.done = pending.done;
      state.total = pending.total;
      const bundle = state.queue[0];
      if (bundle) {
        state.phase = "rating";
        state.form = emptyForm(bundle.bundle_id);
      } else {
        state.phase = "done";
      }
    } catch (error) {
      state.phase = "fatal";
      state.fatalMessage = error instanceof Error ? error.message : "cannot reach the review service";
    }
    paint();
  }

  async function submit(): Promise<void> {
    const bundle = current();
    if (!bundle || !state.form || !canSubmit(state.form)) return;
    const body = buildRatingBody(state.form, rater as string);
    state.form = setPhase(state.form, "submitting");
    paint();
    try {
      await api.submitRating(body);
      advance();
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        advance(); // already rated elsewhere: skip forward, nothing lost
        return;
      }
      // network trouble or validation surprise: keep the filled form, offer retry
      const message = error instanceof Error ? error.message : "submission failed";
      state.form = setPhase(state.form, "error", message);
      paint();
    }
  }

  root.addEventListener("change", (event) => {
    const target = event.target as HTMLElement;
    if (target instanceof HTMLInputElement && target.dataset.dimension && state.form) {
      state.form = setScore(setPhase(state.form, "editing"), target.dataset.dimension, Number(target.value));
      paint();
    }
  });
  root.addEventListener("input", (event) => {
    const target = event.target as HTMLElement;
    if (target instanceof HTMLTextAreaElement && state.form) {
      state.form = setComment(state.form, target.value); // no repaint: keep caret
    }
  });
  root.addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest("[data-action]");
    if (!(target instanceof HTMLElement)) return;
    if (target.dataset.action === "retry" && state.form) {
      event.preventDefault();
      state.form = setPhase(state.form, "editing");
      void submit();
    } else if (target.dataset.action === "reload") {
      void load();
    }
  });
  root.addEventListener("submit", (event) => {
    event.preventDefault();
    void submit();
  });

  void load();
}

const rootElement = typeof document !== "undefined" ? document.getElementById("app") : null;
if (rootElement) {
  startApp(rootElement);
}
