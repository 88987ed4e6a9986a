import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    globalSetup: ["tests/global_setup.ts"],
    testTimeout: 30_000,
    hookTimeout: 150_000,
  },
});
