/** Shared orbit-camera state for the two viewports.
 *
 * Both sides read the same state while linked, so the cameras cannot
 * drift apart; unlinking clones the state and each side moves alone.
 */

export interface OrbitPose {
  yaw: number; // radians around +Y
  pitch: number; // radians above the horizon, clamped
  distance: number;
}

const PITCH_LIMIT = Math.PI / 2 - 0.05;
const MIN_DISTANCE = 0.5;
const MAX_DISTANCE = 20;

export const INITIAL_POSE: OrbitPose = { yaw: Math.PI / 4, pitch: Math.PI / 8, distance: 3 };

export class OrbitRig {
  private shared: OrbitPose = { ...INITIAL_POSE };
  private solo: [OrbitPose, OrbitPose] = [{ ...INITIAL_POSE }, { ...INITIAL_POSE }];
  private _linked = true;

  get linked(): boolean {
    return this._linked;
  }

  /** Linking snaps both sides to the pose of the side being dragged last. */
  setLinked(linked: boolean, from: 0 | 1 = 0): void {
    if (linked && !this._linked) {
      this.shared = { ...this.solo[from] };
    } else if (!linked && this._linked) {
      this.solo = [{ ...this.shared }, { ...this.shared }];
    }
    this._linked = linked;
  }

  pose(side: 0 | 1): OrbitPose {
    return this._linked ? this.shared : this.solo[side];
  }

  rotate(side: 0 | 1, dyaw: number, dpitch: number): void {
    const p = this.pose(side);
    p.yaw += dyaw;
    p.pitch = Math.min(PITCH_LIMIT, Math.max(-PITCH_LIMIT, p.pitch + dpitch));
  }

  zoom(side: 0 | 1, factor: number): void {
    const p = this.pose(side);
    p.distance = Math.min(MAX_DISTANCE, Math.max(MIN_DISTANCE, p.distance * factor));
  }

  /** Camera position for a pose, orbiting the origin. */
  position(side: 0 | 1): [number, number, number] {
    const p = this.pose(side);
    const c = Math.cos(p.pitch);
    return [
      p.distance * c * Math.sin(p.yaw),
      p.distance * Math.sin(p.pitch),
      p.distance * c * Math.cos(p.yaw),
    ];
  }

  reset(): void {
    this.shared = { ...INITIAL_POSE };
    this.solo = [{ ...INITIAL_POSE }, { ...INITIAL_POSE }];
  }
}
