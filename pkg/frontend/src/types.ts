/** Shared types mirroring the annotation server's HTTP API. */

export interface HitDocument {
  document_id: string;
  sentences: string[];
}

export interface HitView {
  hit_id: string;
  progress: number;
  documents: HitDocument[];
}

/** A selection is a non-opening sentence index (>= 2) or "NONE". */
export type Choice = number | "NONE";

export interface AnnotationRequest {
  hit_id: string;
  document_id: string;
  worker_id: string;
  choice: Choice;
}

export interface SubmitOutcome {
  document_id: string;
  status: "accepted" | "duplicate" | "rejected" | "network-error";
  detail?: string;
}
