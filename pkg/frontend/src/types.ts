/** Wire types mirrored from the annotation backend. */

export interface SceneObject {
  id: number;
  label: string;
  center: [number, number, number];
  size: [number, number, number];
  color: string;
  point_seed: number;
}

export interface Scene {
  scene_id: string;
  room: [number, number, number];
  objects: SceneObject[];
}

export interface Span {
  start: number;
  end: number;
  object_id: number;
  is_target: boolean;
}

export interface AnnotationRecord {
  sample_id: string;
  annotator_id: string;
  spans: Span[];
  unsure: boolean;
  timestamp?: number;
}

export interface Task {
  sample_id: string | null;
  scene_id?: string;
  tokens?: string[];
  status?: string;
  redo?: boolean;
  done?: boolean;
}

export interface VerifyRequest {
  sample_id: string;
  annotator_id: string;
  approve: boolean;
}

export interface VerifyStatus {
  sample_id: string;
  status: "pending" | "verified" | "disputed";
  approvals: string[];
}

export interface AnnotationsResponse {
  records: AnnotationRecord[];
  status: VerifyStatus;
}
