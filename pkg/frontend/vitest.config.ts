import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    environment: "node",
    // live suites each spawn a center process; keep files sequential so
    // python startup does not stack up
    fileParallelism: false,
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
