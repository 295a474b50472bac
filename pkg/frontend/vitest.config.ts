import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // The service integration tests boot the real HTTP server and run an
    // embedding job before they can click anything.
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
