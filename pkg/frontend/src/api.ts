import type {
  ChoiceSubmission,
  WireChoiceAck,
  WireExport,
  WirePairing,
  WireSessionState,
} from "./types";

/** Minimal fetch-shaped transport so tests can swap the network out. */
export type Transport = (path: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
    readonly body: Record<string, unknown> = {},
  ) {
    super(`${status}: ${detail}`);
  }
}

async function parseError(res: Response): Promise<ApiError> {
  let body: Record<string, unknown> = {};
  try {
    body = (await res.json()) as Record<string, unknown>;
  } catch {
    // non-JSON error body; keep the status
  }
  return new ApiError(res.status, String(body.detail ?? res.statusText), body);
}

/** Typed client for the annotation service; one method per endpoint. */
export class ServiceClient {
  constructor(private readonly transport: Transport) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.transport(path, init);
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as T;
  }

  async createSession(
    objectId: string,
    meshIds: string[],
    seed: number,
    subjectId?: string,
  ): Promise<string> {
    const body: Record<string, unknown> = {
      object_id: objectId,
      mesh_ids: meshIds,
      seed,
    };
    if (subjectId) body.subject_id = subjectId;
    const out = await this.json<{ session_id: string }>("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return out.session_id;
  }

  sessionState(sessionId: string): Promise<WireSessionState> {
    return this.json(`/sessions/${sessionId}`);
  }

  /** Outstanding pairs of the current round; ApiError 409 once complete. */
  nextPairing(sessionId: string): Promise<WirePairing> {
    return this.json(`/sessions/${sessionId}/next`);
  }

  submitChoice(sessionId: string, choice: ChoiceSubmission): Promise<WireChoiceAck> {
    return this.json(`/sessions/${sessionId}/choice`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(choice),
    });
  }

  exportSession(sessionId: string): Promise<WireExport> {
    return this.json(`/sessions/${sessionId}/export`);
  }

  async fetchMesh(meshId: string): Promise<string> {
    const res = await this.transport(`/meshes/${meshId}`);
    if (!res.ok) throw await parseError(res);
    return res.text();
  }
}

export function fetchTransport(baseUrl = ""): Transport {
  return (path, init) => fetch(baseUrl + path, init);
}
