import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    environment: "node",
    // The live test boots a real service process.
    testTimeout: 60000,
    hookTimeout: 90000,
  },
});
