/** Vitest global setup: spawn the live annotation servers for e2e tests. */

import { ChildProcess, spawn } from "node:child_process";
import { mkdirSync, writeFileSync, rmSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const here = dirname(fileURLToPath(import.meta.url));
const configPath = join(here, ".tmp", "e2e.json");

let child: ChildProcess | null = null;

export default async function setup(): Promise<() => void> {
  mkdirSync(join(here, ".tmp"), { recursive: true });
  child = spawn("python3", [join(here, "serve_fixture.py")], {
    stdio: ["ignore", "pipe", "inherit"],
  });

  const ready = await new Promise<string>((resolve, reject) => {
    const timer = setTimeout(
      () => reject(new Error("e2e server fixture did not become ready in 120s")),
      120_000,
    );
    let buffer = "";
    child!.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const line = buffer.split("\n").find((l) => l.startsWith("READY "));
      if (line) {
        clearTimeout(timer);
        resolve(line.slice("READY ".length));
      }
    });
    child!.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`e2e server fixture exited early with code ${code}`));
    });
  });

  writeFileSync(configPath, ready);
  return () => {
    child?.kill();
    rmSync(join(here, ".tmp"), { recursive: true, force: true });
  };
}
