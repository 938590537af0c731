// Shapes of the service's HTTP responses and SSE event payloads.

export interface RunSummary {
  run_id: string;
  label: string | null;
  status: string;
  page_count: number;
  created_at: string;
}

export interface PageSnapshot {
  index: number;
  text: string;
  image: string;
  attempts: number;
  acceptance: string;
  alpha: number;
  eta: number;
}

export interface CastMember {
  id: string;
  name: string;
  descriptor: string;
}

export interface SheetRef {
  character_id: string;
  image: string;
  provenance: string;
}

export interface RunSnapshot {
  run_id: string;
  label: string | null;
  status: string;
  draft: { text: string; page_count: number; style: string };
  config: Record<string, unknown>;
  warnings: string[];
  failure: Record<string, unknown> | null;
  round: number;
  pages: PageSnapshot[];
  cast: CastMember[];
  sheets: SheetRef[];
  cost: { grand: { total_tokens: number; calls: number } };
}

export interface AttemptInfo {
  revision: number;
  accepted: boolean;
  safe: boolean;
  safety_reason: string;
  alpha: number | null;
  eta: number | null;
  frame_issues: string[];
  identity_issues: string[];
  image: string | null;
  prompt: string;
}

export interface ServiceEvent {
  seq: number;
  event: string;
  data: Record<string, unknown>;
}

export interface FieldError {
  field: string;
  reason: string;
}
