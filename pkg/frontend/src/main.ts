import { ServiceClient, fetchTransport } from "./api";
import { SessionStore } from "./store";
import { renderPhase } from "./ui";
import { PairViewer } from "./viewer";
import "./style.css";

/** Entry point: join or create a session, then hand off to the store. */

const app = document.getElementById("app")!;
const client = new ServiceClient(fetchTransport());
const store = new SessionStore(client);
let viewer: PairViewer | null = null;

const handlers = {
  onChoose: (side: "left" | "right") => void store.choose(side),
  onToggleLink: (linked: boolean) => viewer?.setLinked(linked),
  onRetry: () => void store.retry(),
};

store.subscribe((phase) => {
  viewer?.dispose();
  viewer = null;
  renderPhase(app, phase, handlers, store.placementSeed);
  if (phase.kind === "comparing" || phase.kind === "submitting") {
    const left = app.querySelector<HTMLCanvasElement>('canvas[data-side="left"]');
    const right = app.querySelector<HTMLCanvasElement>('canvas[data-side="right"]');
    if (left && right) {
      viewer = new PairViewer(left, right);
      viewer.show(phase.meshes.left, phase.meshes.right);
    }
  }
});

function renderJoinForm(): void {
  app.replaceChildren();
  const form = document.createElement("form");
  form.className = "join";
  form.innerHTML = `
    <h1>Shape comparison</h1>
    <label>Session id <input name="session" placeholder="paste an existing id"></label>
    <p class="or">or start a new one</p>
    <label>Object name <input name="object" placeholder="chair"></label>
    <label>Mesh ids (comma separated) <input name="meshes"></label>
    <label>Seed <input name="seed" type="number" value="0"></label>
    <label>Your id <input name="subject" placeholder="optional"></label>
    <button type="submit">Begin</button>
  `;
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const data = new FormData(form);
    const sessionId = String(data.get("session") ?? "").trim();
    if (sessionId) {
      void store.resume(sessionId);
      return;
    }
    const meshes = String(data.get("meshes") ?? "")
      .split(",")
      .map((m) => m.trim())
      .filter(Boolean);
    void store.create(
      String(data.get("object") ?? "").trim(),
      meshes,
      Number(data.get("seed") ?? 0),
      String(data.get("subject") ?? "").trim() || undefined,
    );
  });
  app.append(form);
}

const preset = new URLSearchParams(window.location.search).get("session");
if (preset) {
  void store.resume(preset);
} else {
  renderJoinForm();
}
