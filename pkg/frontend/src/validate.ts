// Client-side mirror of the service's run-config validation: presets are
// expanded locally so the request body carries concrete thresholds, and
// bad fields surface inline before any network call.

import type { FieldError } from "./types.js";

export interface FormInput {
  text: string;
  pageCount: number;
  style: string;
  preset: string;
  tauAlpha?: number;
  tauEta?: number;
  tauBeta?: number;
  frameBudget?: number;
  sequenceRounds?: number;
  contextWindow?: number;
}

export interface RunRequestBody {
  draft: { text: string; page_count: number; style: string };
  config: {
    preset: string;
    tau_alpha: number;
    tau_eta: number;
    tau_beta: number;
    frame_budget: number;
    sequence_rounds: number;
    context_window?: number;
  };
  label?: string;
}

export const MAX_PAGES = 100;

// preset -> [tau_alpha, tau_eta, tau_beta, frame_budget, sequence_rounds]
export const PRESETS: Record<string, [number, number, number, number, number]> = {
  loose: [0.6, 0.6, 0.7, 1, 1],
  default: [0.75, 0.75, 0.8, 3, 1],
  strict: [0.85, 0.85, 0.9, 5, 1],
};

export function validateForm(form: FormInput): { body?: RunRequestBody; errors: FieldError[] } {
  const errors: FieldError[] = [];
  if (!form.text.trim()) {
    errors.push({ field: "text", reason: "draft text must be non-empty" });
  }
  if (!Number.isInteger(form.pageCount) || form.pageCount < 1 || form.pageCount > MAX_PAGES) {
    errors.push({ field: "page_count", reason: `pages must be 1..${MAX_PAGES}` });
  }

  let values: [number, number, number, number, number];
  if (form.preset === "custom") {
    const base = PRESETS.default;
    values = [
      form.tauAlpha ?? base[0],
      form.tauEta ?? base[1],
      form.tauBeta ?? base[2],
      form.frameBudget ?? base[3],
      form.sequenceRounds ?? base[4],
    ];
  } else if (PRESETS[form.preset]) {
    values = PRESETS[form.preset];
    const overrides: Array<[string, number | undefined, number]> = [
      ["tau_alpha", form.tauAlpha, values[0]],
      ["tau_eta", form.tauEta, values[1]],
      ["tau_beta", form.tauBeta, values[2]],
      ["frame_budget", form.frameBudget, values[3]],
      ["sequence_rounds", form.sequenceRounds, values[4]],
    ];
    for (const [field, given, pinned] of overrides) {
      if (given !== undefined && given !== pinned) {
        errors.push({ field, reason: `conflicts with preset ${form.preset}` });
      }
    }
  } else {
    errors.push({ field: "preset", reason: `unknown preset ${form.preset}` });
    values = PRESETS.default;
  }

  const [tauAlpha, tauEta, tauBeta, frameBudget, sequenceRounds] = values;
  for (const [field, value] of [
    ["tau_alpha", tauAlpha],
    ["tau_eta", tauEta],
    ["tau_beta", tauBeta],
  ] as const) {
    if (value < 0 || value > 1) errors.push({ field, reason: "out of [0,1]" });
  }
  if (!Number.isInteger(frameBudget) || frameBudget < 1) {
    errors.push({ field: "frame_budget", reason: "must be an integer >= 1" });
  }
  if (!Number.isInteger(sequenceRounds) || sequenceRounds < 0) {
    errors.push({ field: "sequence_rounds", reason: "must be an integer >= 0" });
  }

  if (errors.length > 0) return { errors };
  return {
    errors: [],
    body: {
      draft: { text: form.text, page_count: form.pageCount, style: form.style },
      config: {
        preset: form.preset,
        tau_alpha: tauAlpha,
        tau_eta: tauEta,
        tau_beta: tauBeta,
        frame_budget: frameBudget,
        sequence_rounds: sequenceRounds,
        ...(form.contextWindow !== undefined ? { context_window: form.contextWindow } : {}),
      },
    },
  };
}
