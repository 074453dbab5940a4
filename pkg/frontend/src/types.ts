/** Wire shapes of the annotation service, mirrored field for field. */

export interface WirePair {
  left_mesh: string;
  right_mesh: string;
}

export interface WirePairing {
  round: number;
  total_rounds: number;
  pairs: WirePair[];
  bye?: string;
  extra_byes?: string[];
}

export interface WireSessionState {
  session_id: string;
  object_id: string;
  mesh_ids: string[];
  round: number;
  total_rounds: number;
  recorded: number;
  pending_pairs: number;
  complete: boolean;
}

export interface WireChoiceAck {
  accepted: boolean;
  round: number;
  remaining_pairs: number;
  complete: boolean;
  replayed?: boolean;
}

export interface WireRecord {
  mesh_id: string;
  subject_id: string;
  wins: number;
  rounds_played: number;
  score: number;
}

export interface WireExport {
  session_id: string;
  object_id: string;
  records: WireRecord[];
}

/** One side-by-side comparison as presented to the evaluator. */
export interface ComparisonView {
  sessionId: string;
  round: number; // 1..totalRounds
  totalRounds: number;
  /** mesh shown on the left after the seeded placement shuffle */
  leftMesh: string;
  /** mesh shown on the right */
  rightMesh: string;
  /** canonical pair identity, independent of placement */
  pairKey: string;
  doneInRound: number;
  totalInRound: number;
  bye?: string;
}

/** What gets POSTed for one forced choice. */
export interface ChoiceSubmission {
  left_mesh: string;
  right_mesh: string;
  winner: string;
  idempotency_key: string;
}

export interface PlacementLogEntry {
  round: number;
  pair: [string, string]; // canonical sorted order
  flipped: boolean;
  presentedLeft: string;
  presentedRight: string;
}

export function pairKey(a: string, b: string): string {
  return a < b ? `${a}|${b}` : `${b}|${a}`;
}
