import { ApiError, ServiceClient } from "./api";
import { parseMesh, type ParsedMesh } from "./mesh";
import { PlacementShuffler } from "./placement";
import {
  pairKey,
  type ComparisonView,
  type PlacementLogEntry,
  type WireExport,
  type WirePair,
} from "./types";

/** One acknowledged choice, as the evaluator made it. */
export interface AckEntry {
  round: number;
  pair: [string, string];
  winner: string;
  idempotencyKey: string;
  replayed: boolean;
}

export type Phase =
  | { kind: "idle" }
  | { kind: "loading" }
  | {
      kind: "comparing";
      view: ComparisonView;
      meshes: { left: ParsedMesh; right: ParsedMesh };
    }
  | {
      kind: "submitting";
      view: ComparisonView;
      meshes: { left: ParsedMesh; right: ParsedMesh };
    }
  | { kind: "error"; message: string }
  | { kind: "complete"; export: WireExport };

function newIdempotencyKey(): string {
  if (typeof crypto !== "undefined" && "randomUUID" in crypto) {
    return crypto.randomUUID();
  }
  return `k-${Date.now().toString(16)}-${Math.floor(Math.random() * 1e12).toString(16)}`;
}

/** Drives one annotation session: fetch pairs, present, submit, advance.
 *
 * The server is the source of truth; this store only tracks what it was
 * told. While a session is active the phase never carries a score or a
 * win count, so the view layer cannot leak one (blinding by construction).
 */
export class SessionStore {
  phase: Phase = { kind: "idle" };
  sessionId = "";
  objectId = "";

  private queue: WirePair[] = [];
  private round = 0;
  private totalRounds = 6;
  private totalInRound = 0;
  private doneInRound = 0;
  private bye: string | undefined;
  private placement: PlacementShuffler;
  private keys = new Map<string, string>(); // pairKey -> idempotency key
  private meshCache = new Map<string, ParsedMesh>();
  private retryAction: (() => Promise<void>) | null = null;
  private listeners = new Set<(phase: Phase) => void>();

  /** Every server-acknowledged choice, exactly once each. */
  readonly ackLog: AckEntry[] = [];

  constructor(
    private readonly client: ServiceClient,
    placementSeed: number = Math.floor(Math.random() * 2 ** 31),
  ) {
    this.placement = new PlacementShuffler(placementSeed);
  }

  get placementSeed(): number {
    return this.placement.seed;
  }

  get placementLog(): readonly PlacementLogEntry[] {
    return this.placement.log;
  }

  subscribe(fn: (phase: Phase) => void): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private setPhase(phase: Phase): void {
    this.phase = phase;
    for (const fn of this.listeners) fn(phase);
  }

  private fail(message: string, retry: () => Promise<void>): void {
    this.retryAction = retry;
    this.setPhase({ kind: "error", message });
  }

  /** Re-run whatever failed, with the same idempotency key where relevant. */
  async retry(): Promise<void> {
    const action = this.retryAction;
    if (!action) return;
    this.retryAction = null;
    await action();
  }

  async create(objectId: string, meshIds: string[], seed: number, subjectId?: string): Promise<void> {
    this.setPhase({ kind: "loading" });
    try {
      this.sessionId = await this.client.createSession(objectId, meshIds, seed, subjectId);
      this.objectId = objectId;
    } catch (err) {
      this.fail(describe(err), () => this.create(objectId, meshIds, seed, subjectId));
      return;
    }
    await this.loadNext();
  }

  async resume(sessionId: string): Promise<void> {
    this.setPhase({ kind: "loading" });
    try {
      const state = await this.client.sessionState(sessionId);
      this.sessionId = state.session_id;
      this.objectId = state.object_id;
      this.totalRounds = state.total_rounds;
    } catch (err) {
      this.fail(describe(err), () => this.resume(sessionId));
      return;
    }
    await this.loadNext();
  }

  private async loadNext(): Promise<void> {
    this.setPhase({ kind: "loading" });
    try {
      const pairing = await this.client.nextPairing(this.sessionId);
      this.round = pairing.round;
      this.totalRounds = pairing.total_rounds;
      this.totalInRound = pairing.pairs.length;
      this.doneInRound = 0;
      this.bye = pairing.bye;
      this.queue = [...pairing.pairs];
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        await this.finish();
        return;
      }
      this.fail(describe(err), () => this.loadNext());
      return;
    }
    await this.presentFront();
  }

  private async finish(): Promise<void> {
    try {
      const exported = await this.client.exportSession(this.sessionId);
      this.setPhase({ kind: "complete", export: exported });
    } catch (err) {
      this.fail(describe(err), () => this.finish());
    }
  }

  private async presentFront(): Promise<void> {
    const served = this.queue[0];
    const key = pairKey(served.left_mesh, served.right_mesh);
    // placement is decided once per presentation; a fetch retry keeps it
    const placed = this.placement.place(this.round, [served.left_mesh, served.right_mesh]);
    if (!this.keys.has(key)) this.keys.set(key, newIdempotencyKey());
    await this.showPair(placed.left, placed.right, key);
  }

  private async showPair(left: string, right: string, key: string): Promise<void> {
    this.setPhase({ kind: "loading" });
    try {
      const [leftMesh, rightMesh] = await Promise.all([
        this.mesh(left),
        this.mesh(right),
      ]);
      this.setPhase({
        kind: "comparing",
        view: {
          sessionId: this.sessionId,
          round: this.round,
          totalRounds: this.totalRounds,
          leftMesh: left,
          rightMesh: right,
          pairKey: key,
          doneInRound: this.doneInRound,
          totalInRound: this.totalInRound,
          bye: this.bye,
        },
        meshes: { left: leftMesh, right: rightMesh },
      });
    } catch (err) {
      this.fail(describe(err), () => this.showPair(left, right, key));
    }
  }

  private async mesh(meshId: string): Promise<ParsedMesh> {
    const cached = this.meshCache.get(meshId);
    if (cached) return cached;
    const parsed = parseMesh(await this.client.fetchMesh(meshId));
    this.meshCache.set(meshId, parsed);
    return parsed;
  }

  /** Record the evaluator's pick. Extra clicks while in flight are ignored. */
  async choose(side: "left" | "right"): Promise<void> {
    if (this.phase.kind !== "comparing") return;
    const { view, meshes } = this.phase;
    const winner = side === "left" ? view.leftMesh : view.rightMesh;
    this.setPhase({ kind: "submitting", view, meshes });
    await this.submit(view, meshes, winner);
  }

  private async submit(
    view: ComparisonView,
    meshes: { left: ParsedMesh; right: ParsedMesh },
    winner: string,
  ): Promise<void> {
    const key = this.keys.get(view.pairKey)!;
    let replayed = false;
    let recordedWinner = winner;
    try {
      const ack = await this.client.submitChoice(this.sessionId, {
        left_mesh: view.leftMesh,
        right_mesh: view.rightMesh,
        winner,
        idempotency_key: key,
      });
      replayed = Boolean(ack.replayed);
    } catch (err) {
      if (err instanceof ApiError && err.body.duplicate === true) {
        // a retried submit that actually landed the first time
        recordedWinner = String(err.body.winner ?? winner);
        replayed = true;
      } else {
        this.setPhase({ kind: "error", message: describe(err) });
        this.retryAction = () => {
          this.setPhase({ kind: "submitting", view, meshes });
          return this.submit(view, meshes, winner);
        };
        return;
      }
    }
    const [a, b] = view.pairKey.split("|") as [string, string];
    this.ackLog.push({
      round: view.round,
      pair: [a, b],
      winner: recordedWinner,
      idempotencyKey: key,
      replayed,
    });
    this.doneInRound += 1;
    this.queue.shift();
    if (this.queue.length > 0) {
      await this.presentFront();
    } else {
      await this.loadNext();
    }
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return err.detail;
  if (err instanceof Error) return err.message;
  return String(err);
}
