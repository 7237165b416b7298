import { defineConfig } from "vite";

export default defineConfig({
  build: { outDir: "dist" },
  server: { proxy: { "/sessions": "http://127.0.0.1:8000", "/healthz": "http://127.0.0.1:8000" } },
  test: { environment: "jsdom" },
});
