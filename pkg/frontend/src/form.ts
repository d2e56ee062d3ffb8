import { DIMENSIONS, Dimension, RatingBody, SCORE_MAX, SCORE_MIN } from "./types.js";

export type FormPhase = "editing" | "submitting" | "error";

export interface RatingFormState {
  bundleId: string;
  scores: Partial<Record<Dimension, number>>;
  comment: string;
  phase: FormPhase;
  errorMessage: string | null;
}

export function emptyForm(bundleId: string): RatingFormState {
  return { bundleId, scores: {}, comment: "", phase: "editing", errorMessage: null };
}

/** Returns a new state; out-of-range or unknown inputs leave it unchanged. */
export function setScore(state: RatingFormState, dimension: string, value: number): RatingFormState {
  if (!(DIMENSIONS as readonly string[]).includes(dimension)) return state;
  if (!Number.isInteger(value) || value < SCORE_MIN || value > SCORE_MAX) return state;
  return { ...state, scores: { ...state.scores, [dimension as Dimension]: value } };
}

export function setComment(state: RatingFormState, comment: string): RatingFormState {
  return { ...state, comment };
}

export function setPhase(state: RatingFormState, phase: FormPhase, errorMessage: string | null = null): RatingFormState {
  return { ...state, phase, errorMessage };
}

/** Submit is enabled only when every one of the 8 dimensions is set. */
export function canSubmit(state: RatingFormState): boolean {
  return state.phase === "editing" && DIMENSIONS.every((d) => typeof state.scores[d] === "number");
}

export function buildRatingBody(state: RatingFormState, raterId: string): RatingBody {
  const scores: Partial<Record<Dimension, number>> = {};
  for (const dimension of DIMENSIONS) {
    const value = state.scores[dimension];
    if (typeof value !== "number") {
      throw new Error(`dimension ${dimension} is not set`);
    }
    scores[dimension] = value;
  }
  const body: RatingBody = {
    bundle_id: state.bundleId,
    rater_id: raterId,
    scores: scores as Record<Dimension, number>,
  };
  if (state.comment.trim() !== "") {
    body.comment = state.comment.trim();
  }
  return body;
}
