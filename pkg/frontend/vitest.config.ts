import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // the conformance test drives a Python client end to end
    testTimeout: 120_000,
    hookTimeout: 60_000,
  },
});
