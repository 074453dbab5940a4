import type { PlacementLogEntry } from "./types";

/** Seeded left/right shuffling so position bias averages out.
 *
 * Placement must be reproducible from the logged seed, so the generator
 * is a fixed small PRNG rather than Math.random.
 */

// mulberry32: tiny, well-distributed, and stable across platforms
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export class PlacementShuffler {
  private readonly next: () => number;
  readonly log: PlacementLogEntry[] = [];

  constructor(readonly seed: number) {
    this.next = mulberry32(seed);
  }

  /** Decide display order for a served pair; the decision is logged. */
  place(round: number, served: [string, string]): { left: string; right: string } {
    const [a, b] = [...served].sort();
    const flipped = this.next() < 0.5;
    const left = flipped ? b : a;
    const right = flipped ? a : b;
    this.log.push({ round, pair: [a, b], flipped, presentedLeft: left, presentedRight: right });
    return { left, right };
  }
}
