import * as THREE from "three";

import type { ParsedMesh } from "./mesh";
import { OrbitRig } from "./orbit";

/** Side-by-side mesh rendering with identical lighting and material.
 *
 * Both panes share one OrbitRig, so while cameras are linked a drag on
 * either side moves both in lockstep. Geometry is shown shaded and
 * untextured; the material is the same fixed gray on both sides.
 */

const BACKGROUND = 0x15171c;
const MATERIAL_COLOR = 0xb8bcc4;

function buildScene(): THREE.Scene {
  const scene = new THREE.Scene();
  scene.background = new THREE.Color(BACKGROUND);
  const sun = new THREE.DirectionalLight(0xffffff, 2.2);
  sun.position.set(2, 3, 2);
  scene.add(sun);
  scene.add(new THREE.AmbientLight(0xffffff, 0.35));
  return scene;
}

function buildGeometry(mesh: ParsedMesh): THREE.BufferGeometry {
  const geometry = new THREE.BufferGeometry();
  geometry.setAttribute("position", new THREE.BufferAttribute(mesh.positions, 3));
  if (mesh.indices.length > 0) {
    geometry.setIndex(new THREE.BufferAttribute(mesh.indices, 1));
  }
  geometry.computeVertexNormals();
  // center and scale to a unit-ish box so every mesh fills the frame alike
  geometry.computeBoundingSphere();
  const sphere = geometry.boundingSphere;
  if (sphere && sphere.radius > 0) {
    geometry.translate(-sphere.center.x, -sphere.center.y, -sphere.center.z);
    const s = 1 / sphere.radius;
    geometry.scale(s, s, s);
  }
  return geometry;
}

class Pane {
  readonly renderer: THREE.WebGLRenderer;
  readonly camera: THREE.PerspectiveCamera;
  readonly scene: THREE.Scene;
  private model: THREE.Mesh | null = null;

  constructor(readonly canvas: HTMLCanvasElement) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(45, 1, 0.01, 100);
    this.scene = buildScene();
  }

  setMesh(mesh: ParsedMesh): void {
    if (this.model) {
      this.scene.remove(this.model);
      this.model.geometry.dispose();
    }
    const material = new THREE.MeshStandardMaterial({
      color: MATERIAL_COLOR,
      flatShading: false,
      metalness: 0.05,
      roughness: 0.75,
    });
    this.model = new THREE.Mesh(buildGeometry(mesh), material);
    this.scene.add(this.model);
  }

  render(position: [number, number, number]): void {
    const w = this.canvas.clientWidth || 1;
    const h = this.canvas.clientHeight || 1;
    this.renderer.setSize(w, h, false);
    this.camera.aspect = w / h;
    this.camera.updateProjectionMatrix();
    this.camera.position.set(...position);
    this.camera.lookAt(0, 0, 0);
    this.renderer.render(this.scene, this.camera);
  }

  dispose(): void {
    this.renderer.dispose();
  }
}

export class PairViewer {
  readonly rig = new OrbitRig();
  private panes: [Pane, Pane];
  private dragging: 0 | 1 | null = null;
  private lastPointer: [number, number] = [0, 0];

  constructor(leftCanvas: HTMLCanvasElement, rightCanvas: HTMLCanvasElement) {
    this.panes = [new Pane(leftCanvas), new Pane(rightCanvas)];
    ([0, 1] as const).forEach((side) => this.bind(side));
  }

  private bind(side: 0 | 1): void {
    const canvas = this.panes[side].canvas;
    canvas.addEventListener("pointerdown", (ev) => {
      this.dragging = side;
      this.lastPointer = [ev.clientX, ev.clientY];
      canvas.setPointerCapture(ev.pointerId);
    });
    canvas.addEventListener("pointermove", (ev) => {
      if (this.dragging !== side) return;
      const [x, y] = this.lastPointer;
      this.lastPointer = [ev.clientX, ev.clientY];
      this.rig.rotate(side, (ev.clientX - x) * 0.01, -(ev.clientY - y) * 0.01);
      this.renderBoth();
    });
    canvas.addEventListener("pointerup", () => {
      this.dragging = null;
    });
    canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.rig.zoom(side, ev.deltaY > 0 ? 1.1 : 1 / 1.1);
      this.renderBoth();
    });
  }

  setLinked(linked: boolean): void {
    this.rig.setLinked(linked, this.dragging ?? 0);
    this.renderBoth();
  }

  show(left: ParsedMesh, right: ParsedMesh): void {
    this.rig.reset();
    this.panes[0].setMesh(left);
    this.panes[1].setMesh(right);
    this.renderBoth();
  }

  renderBoth(): void {
    this.panes[0].render(this.rig.position(0));
    this.panes[1].render(this.rig.position(1));
  }

  dispose(): void {
    this.panes.forEach((p) => p.dispose());
  }
}
