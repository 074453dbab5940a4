import { defineConfig } from "vitest/config";

export default defineConfig({
  base: "./",
  build: {
    outDir: "dist",
    sourcemap: false,
  },
  server: {
    proxy: {
      // during development the annotation service runs separately
      "/sessions": "http://127.0.0.1:8470",
      "/meshes": "http://127.0.0.1:8470",
      "/healthz": "http://127.0.0.1:8470",
    },
  },
  test: {
    environment: "node",
    testTimeout: 30000,
    hookTimeout: 30000,
  },
});
