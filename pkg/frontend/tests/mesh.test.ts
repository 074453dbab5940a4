import { describe, expect, it } from "vitest";

import { MeshFormatError, parseMesh, parseObj, parsePly } from "../src/mesh";

const CUBE_OBJ = `
# comment line
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
f 1 2 3 4
`;

describe("obj parsing", () => {
  it("reads vertices and fans quads into triangles", () => {
    const mesh = parseObj(CUBE_OBJ);
    expect(mesh.positions).toHaveLength(12);
    expect(Array.from(mesh.indices)).toEqual([0, 1, 2, 0, 2, 3]);
  });

  it("handles slash-style face references and negative indices", () => {
    const mesh = parseObj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2//2 -1");
    expect(Array.from(mesh.indices)).toEqual([0, 1, 2]);
  });

  it("parses scientific notation coordinates", () => {
    const mesh = parseObj("v 1e-3 -2.5E2 0.0\nv 0 0 1\nv 1 0 0\nf 1 2 3");
    expect(mesh.positions[0]).toBeCloseTo(0.001);
    expect(mesh.positions[1]).toBeCloseTo(-250);
  });

  it("rejects malformed geometry", () => {
    expect(() => parseObj("v 1 2")).toThrow(MeshFormatError);
    expect(() => parseObj("v 0 0 0\nf 1 2 9")).toThrow(MeshFormatError);
    expect(() => parseObj("f 0 1 2")).toThrow(MeshFormatError);
    expect(() => parseObj("")).toThrow(MeshFormatError);
    expect(() => parseObj("v 1 nan 0\nv 0 0 0\nv 1 1 1\nf 1 2 3")).toThrow(
      MeshFormatError,
    );
  });
});

const TETRA_PLY = `ply
format ascii 1.0
element vertex 4
property float x
property float y
property float z
element face 4
property list uchar int vertex_indices
end_header
0 0 0
1 0 0
0 1 0
0 0 1
3 0 1 2
3 0 1 3
3 0 2 3
3 1 2 3
`;

describe("ply parsing", () => {
  it("reads an ascii tetrahedron", () => {
    const mesh = parsePly(TETRA_PLY);
    expect(mesh.positions).toHaveLength(12);
    expect(mesh.indices).toHaveLength(12);
  });

  it("rejects binary and truncated files", () => {
    expect(() => parsePly("ply\nformat binary_little_endian 1.0\nend_header\n")).toThrow(
      MeshFormatError,
    );
    expect(() => parsePly("ply\nelement vertex 9\nend_header\n0 0 0")).toThrow(
      MeshFormatError,
    );
    expect(() => parsePly("not a ply")).toThrow(MeshFormatError);
  });
});

describe("format dispatch", () => {
  it("routes by content, not filename", () => {
    expect(parseMesh(TETRA_PLY).positions).toHaveLength(12);
    expect(parseMesh(CUBE_OBJ).positions).toHaveLength(12);
    expect(parseMesh("  \nply\nformat ascii 1.0\nelement vertex 1\nend_header\n1 2 3\n").positions).toHaveLength(3);
  });
});
