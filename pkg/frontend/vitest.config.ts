import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // the contract suite drives real fit/probe/serve processes
    testTimeout: 180_000,
    hookTimeout: 300_000,
    // probe determinism checks must not race each other into the server
    fileParallelism: false,
  },
});
