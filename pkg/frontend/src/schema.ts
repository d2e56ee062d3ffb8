/** Contract mirror of the service's rating-record schema.
 *
 * Used by the tests as the validation oracle for POST /api/ratings bodies;
 * the browser bundle never imports this module (zod stays a dev
 * dependency).
 */

import { z } from "zod";

const score = z.number().int().min(1).max(5);

export const ratingBodySchema = z
  .object({
    bundle_id: z.string().min(1),
    rater_id: z.string().min(1),
    scores: z
      .object({
        Utility: score,
        Precision: score,
        Completeness: score,
        TimeSaved: score,
        Clarity: score,
        Trust: score,
        Fairness: score,
        NoHarm: score,
      })
      .strict(),
    comment: z.string().optional(),
  })
  .strict();

export type RatingBodyContract = z.infer<typeof ratingBodySchema>;
