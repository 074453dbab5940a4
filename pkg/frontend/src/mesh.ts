/** Parse the two mesh formats the service serves: OBJ and ascii PLY.
 *
 * Only the geometry subset the annotator needs: vertex positions and
 * triangular faces. Faces with more than three corners are fanned.
 */

export interface ParsedMesh {
  positions: Float32Array; // xyz triples
  indices: Uint32Array; // triangle corners
}

export class MeshFormatError extends Error {}

function triangulate(corners: number[], out: number[]): void {
  for (let i = 1; i + 1 < corners.length; i++) {
    out.push(corners[0], corners[i], corners[i + 1]);
  }
}

export function parseObj(text: string): ParsedMesh {
  const positions: number[] = [];
  const indices: number[] = [];
  for (const raw of text.split("\n")) {
    const line = raw.trim();
    if (line === "" || line.startsWith("#")) continue;
    const parts = line.split(/\s+/);
    if (parts[0] === "v") {
      if (parts.length < 4) throw new MeshFormatError(`bad vertex line: ${line}`);
      positions.push(Number(parts[1]), Number(parts[2]), Number(parts[3]));
    } else if (parts[0] === "f") {
      if (parts.length < 4) throw new MeshFormatError(`bad face line: ${line}`);
      const corners = parts.slice(1).map((p) => {
        // "7", "7/1", "7//3" all refer to vertex 7; negatives count from the end
        const idx = Number(p.split("/")[0]);
        if (!Number.isInteger(idx) || idx === 0) {
          throw new MeshFormatError(`bad face index ${p} in: ${line}`);
        }
        return idx > 0 ? idx - 1 : positions.length / 3 + idx;
      });
      triangulate(corners, indices);
    }
    // other directives (vn, vt, o, g, s, usemtl...) carry no geometry we need
  }
  return finish(positions, indices);
}

export function parsePly(text: string): ParsedMesh {
  const lines = text.split("\n").map((l) => l.trim());
  const magic = lines.findIndex((l) => l !== "");
  if (magic < 0 || lines[magic] !== "ply") throw new MeshFormatError("missing ply magic");
  let vertexCount = -1;
  let faceCount = -1;
  let cursor = magic + 1;
  for (; cursor < lines.length; cursor++) {
    const line = lines[cursor];
    if (line === "end_header") break;
    const parts = line.split(/\s+/);
    if (parts[0] === "format" && parts[1] !== "ascii") {
      throw new MeshFormatError(`unsupported ply format ${parts[1]}`);
    }
    if (parts[0] === "element" && parts[1] === "vertex") vertexCount = Number(parts[2]);
    if (parts[0] === "element" && parts[1] === "face") faceCount = Number(parts[2]);
  }
  if (cursor >= lines.length) throw new MeshFormatError("unterminated ply header");
  if (vertexCount < 0) throw new MeshFormatError("ply header declares no vertices");
  cursor++;

  const positions: number[] = [];
  const indices: number[] = [];
  const data = lines.slice(cursor).filter((l) => l !== "");
  if (data.length < vertexCount + Math.max(faceCount, 0)) {
    throw new MeshFormatError("ply body shorter than header declares");
  }
  for (let i = 0; i < vertexCount; i++) {
    const parts = data[i].split(/\s+/);
    positions.push(Number(parts[0]), Number(parts[1]), Number(parts[2]));
  }
  for (let i = 0; i < Math.max(faceCount, 0); i++) {
    const parts = data[vertexCount + i].split(/\s+/).map(Number);
    const n = parts[0];
    triangulate(parts.slice(1, 1 + n), indices);
  }
  return finish(positions, indices);
}

/** Dispatch on content: PLY files start with their magic, OBJ is line-based. */
export function parseMesh(text: string): ParsedMesh {
  return text.trimStart().startsWith("ply") ? parsePly(text) : parseObj(text);
}

function finish(positions: number[], indices: number[]): ParsedMesh {
  if (positions.length === 0) throw new MeshFormatError("mesh has no vertices");
  if (positions.some((v) => !Number.isFinite(v))) {
    throw new MeshFormatError("non-finite vertex coordinate");
  }
  const vertexCount = positions.length / 3;
  if (indices.some((i) => i < 0 || i >= vertexCount)) {
    throw new MeshFormatError("face index out of range");
  }
  return {
    positions: new Float32Array(positions),
    indices: new Uint32Array(indices),
  };
}
