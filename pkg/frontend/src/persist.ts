// Settings that survive a reload: endpoint, token, scope scale/window, and
// the protocol step list. Storage is injectable for tests.

import { ProtocolStep, defaultProtocol } from "./runner.js";

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

export interface Settings {
  endpoint: string;
  token: string;
  uvPerDiv: number;
  windowSeconds: number;
  protocolSteps: ProtocolStep[];
}

const KEY = "peeg-dashboard-settings";

export const DEFAULT_SETTINGS: Settings = {
  endpoint: "ws://127.0.0.1:7716/stream",
  token: "",
  uvPerDiv: 50,
  windowSeconds: 10,
  protocolSteps: defaultProtocol(),
};

export class SettingsStore {
  constructor(private storage: StorageLike) {}

  load(): Settings {
    const raw = this.storage.getItem(KEY);
    if (!raw) return { ...DEFAULT_SETTINGS, protocolSteps: defaultProtocol() };
    try {
      const doc = JSON.parse(raw) as Partial<Settings>;
      return {
        ...DEFAULT_SETTINGS,
        ...doc,
        protocolSteps:
          Array.isArray(doc.protocolSteps) && doc.protocolSteps.length > 0
            ? doc.protocolSteps
            : defaultProtocol(),
      };
    } catch {
      return { ...DEFAULT_SETTINGS, protocolSteps: defaultProtocol() };
    }
  }

  save(update: Partial<Settings>): Settings {
    const merged = { ...this.load(), ...update };
    this.storage.setItem(KEY, JSON.stringify(merged));
    return merged;
  }
}
