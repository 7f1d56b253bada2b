/** Payload types for the annotation service API. */

export const CLASSES = [
  'Epithelium',
  'Stroma',
  'Lymphocytes',
  'Adipose',
  'Artifact',
  'Miscellaneous',
] as const;

export type TissueClass = (typeof CLASSES)[number];
export type Decision = TissueClass | 'heterogeneous';

export interface Progress {
  round: number;
  k: number;
  labeled: number;
  heterogeneous: number;
  unreviewed: number;
  finalized: boolean;
}

export interface SessionDescriptor {
  session_id: string;
  slide_id: string;
  round: number;
  k: number;
  progress: Progress;
}

export interface GridPayload {
  cluster_id: number;
  round: number;
  patch_urls: string[];
  grid_side: number;
  classes: string[];
  progress: Progress;
}

export interface RoundComplete {
  round_complete: true;
  transitions: Array<'recluster' | 'finalize'>;
  progress: Progress;
}

export type NextResponse = GridPayload | RoundComplete;

export function isRoundComplete(r: NextResponse): r is RoundComplete {
  return (r as RoundComplete).round_complete === true;
}

export interface ReviewAck {
  ok: boolean;
  duplicate: boolean;
  progress: Progress;
}

export interface FinalizeSummary {
  slide_id: string;
  n_labeled: number;
  n_discarded: number;
  discard_fraction: number;
}

export interface SlideReport {
  slide_id: string;
  class_fractions: Record<string, number>;
  mean_max_probability: number;
  overlay_ref: string | null;
}

export interface Dashboard {
  round_index: number;
  status: string;
  training_slide_ids: string[];
  pool_slide_ids: string[];
  flags: Record<string, boolean>;
  reports: SlideReport[];
}
