/** Wire payloads exchanged with the session service. */

export interface Suggestion {
  q: [number, number];
  max_mi: number | null;
  h_total: number | null;
  heatmap_url: string;
}

export interface CreateSessionResponse {
  session_id: string;
  initial_mask_digest: string;
  height: number;
  width: number;
  has_gt: boolean;
  suggestion: Suggestion | null;
  stop_reason: string | null;
}

export interface LabelResponse {
  t: number;
  label: 0 | 1;
  mask_digest: string;
  iou: number | null;
  max_mi: number | null;
  h_total: number | null;
  next_suggestion: Suggestion | null;
  stop_reason: string | null;
}

export interface TrajectoryRecord {
  t: number;
  q: [number, number];
  label: 0 | 1;
  iou: number | null;
  max_mi: number | null;
  h_total: number | null;
  mask_sha256: string;
}

export interface TrajectoryResponse {
  records: TrajectoryRecord[];
  stop: string | null;
  strategy: string;
  seed: number;
}

export interface ApiFailure {
  status: number;
  error_code: string;
  message: string;
}

export interface CreateSessionRequest {
  strategy: string;
  dataset_item_id?: string;
  posterior_id?: string;
  seed?: number;
  mode?: "simulated" | "human";
  samples_k?: number;
  stop_config?: { tau_mi: number | null; tau_ent: number | null; budget: number };
}

/** Minimal transport the UI depends on; tests substitute a fake. */
export interface SessionApi {
  createSession(req: CreateSessionRequest): Promise<CreateSessionResponse>;
  postLabel(
    sessionId: string,
    q: [number, number],
    label: 0 | 1
  ): Promise<LabelResponse>;
  getTrajectory(sessionId: string): Promise<TrajectoryResponse>;
  stopSession(sessionId: string): Promise<{ stop_reason: string }>;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly errorCode: string,
    message: string
  ) {
    super(message);
  }
}
