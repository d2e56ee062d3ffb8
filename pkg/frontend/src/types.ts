export const DIMENSIONS = [
  "Utility",
  "Precision",
  "Completeness",
  "TimeSaved",
  "Clarity",
  "Trust",
  "Fairness",
  "NoHarm",
] as const;

export type Dimension = (typeof DIMENSIONS)[number];

export const SCORE_MIN = 1;
export const SCORE_MAX = 5;

/** Questionnaire scale anchors; the service sends the same wording. */
export const ANCHORS: Record<number, string> = {
  1: "Strongly disagree",
  2: "Disagree",
  3: "Neutral",
  4: "Agree",
  5: "Strongly agree",
};

export interface SessionInfo {
  session_id: string;
  blinded: boolean;
  n_bundles: number;
  dimensions: string[];
  anchors: Record<string, string>;
}

/** One blinded bundle as served to raters: never carries a variant tag. */
export interface PendingBundle {
  bundle_id: string;
  case_alias: string;
  cohort_year: number;
  case_data: string;
  explanation: string;
}

export interface PendingResponse {
  pending: PendingBundle[];
  done: number;
  total: number;
}

export interface RatingBody {
  bundle_id: string;
  rater_id: string;
  scores: Record<Dimension, number>;
  comment?: string;
}
