/** Zod mirrors of the wire contract (the JSON schemas shipped in ../docs). */

import { z } from "zod";

export const ModelInfoSchema = z.object({
  resolution: z.number().int().positive(),
  age_range: z.tuple([z.number().int(), z.number().int()]),
  sigma_max: z.number().nonnegative(),
  ckpt_tag: z.string(),
});
export type ModelInfo = z.infer<typeof ModelInfoSchema>;

export const EditRequestSchema = z.object({
  image: z.string().min(1),
  target_age: z.number().int(),
  sigma_m: z.number(),
  sigma_g: z.number(),
  return_mask: z.boolean().optional(),
  seed: z.number().int().optional(),
});
export type EditRequest = z.infer<typeof EditRequestSchema>;

export const EditResponseSchema = z.object({
  image_b64: z.string().min(1),
  mask_b64: z.string().nullable().optional(),
  latency_ms: z.number(),
});
export type EditResponse = z.infer<typeof EditResponseSchema>;

export const ErrorResponseSchema = z.object({
  error: z.string(),
  id: z.string().nullable().optional(),
});
export type ErrorResponse = z.infer<typeof ErrorResponseSchema>;

/** Request validator bound to a live /model/info answer: the schema plus the
 * value ranges the service would reject with a 400. */
export function boundRequestSchema(info: ModelInfo) {
  return EditRequestSchema.refine(
    (r) => r.sigma_m >= 0 && r.sigma_m <= info.sigma_max,
    { message: "sigma_m out of range" },
  ).refine((r) => r.sigma_g >= 0 && r.sigma_g <= info.sigma_max, {
    message: "sigma_g out of range",
  }).refine(
    (r) => r.target_age >= info.age_range[0] && r.target_age <= info.age_range[1],
    { message: "target_age out of range" },
  );
}
