/**
 * Post-trial questionnaire: perceived-delay sliders (ms) and workload items.
 * Values travel verbatim; the preview shows the signed perceived-minus-actual
 * deltas the analysis will compute.
 */

import type { ConditionSummary } from "./state.js";

export interface QuestionnaireForm {
  perceived_visual_ms: number;
  perceived_haptic_ms: number;
  perceived_gap_ms: number;
  tlx_total: number;
  tlx_confidence: number;
  tlx_frustration: number;
}

export function emptyForm(): QuestionnaireForm {
  return {
    perceived_visual_ms: 0,
    perceived_haptic_ms: 0,
    perceived_gap_ms: 0,
    tlx_total: 0,
    tlx_confidence: 5,
    tlx_frustration: 1,
  };
}

/** The wire payload is the form, untouched. */
export function buildQuestionnairePayload(form: QuestionnaireForm):
    Record<string, number> {
  return { ...form };
}

export interface DeltaPreview {
  delta_v: number;
  delta_h: number;
  delta_gap: number;
}

export function previewDeltas(form: QuestionnaireForm,
                              condition: ConditionSummary): DeltaPreview {
  const actualGap = Math.abs(condition.visual_delay_ms - condition.haptic_delay_ms);
  return {
    delta_v: form.perceived_visual_ms - condition.visual_delay_ms,
    delta_h: form.perceived_haptic_ms - condition.haptic_delay_ms,
    delta_gap: form.perceived_gap_ms - actualGap,
  };
}
