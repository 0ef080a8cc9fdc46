// Client-side mirror of the converter's register encodings, so the panel can
// reject an illegal value before it ever reaches the wire. Only the fields
// the panel edits are modelled; the raw hex editor covers everything else.

export const REG_CONFIG1 = 0x01;
export const REG_CH1SET = 0x05;
export const REG_ID = 0x00;
export const LAST_REGISTER = 0x17;

export const VALID_GAINS = [1, 2, 4, 6, 8, 12, 24] as const;
export const DATA_RATES = [250, 500, 1000, 2000, 4000, 8000, 16000] as const;

const GAIN_CODE: Record<number, number> = { 1: 0, 2: 1, 4: 2, 6: 3, 8: 4, 12: 5, 24: 6 };
const RATE_CODE: Record<number, number> = {
  16000: 0, 8000: 1, 4000: 2, 2000: 3, 1000: 4, 500: 5, 250: 6,
};

export class RegisterValueError extends Error {}

export function chsetAddr(channel: number): number {
  if (channel < 0 || channel > 7) throw new RegisterValueError(`channel ${channel} out of 0..7`);
  return REG_CH1SET + channel;
}

/** CHnSET byte for a gain, preserving power-down/SRB2/mux bits of `current`. */
export function chsetForGain(gain: number, current = 0x60): number {
  const code = GAIN_CODE[gain];
  if (code === undefined) {
    throw new RegisterValueError(`gain ${gain} not one of ${VALID_GAINS.join(", ")}`);
  }
  return (current & 0x8f) | (code << 4);
}

export function gainFromChset(value: number): number {
  const code = (value >> 4) & 0x07;
  const gain = VALID_GAINS[code];
  if (gain === undefined) throw new RegisterValueError(`gain field 0b111 is reserved`);
  return gain;
}

/** CONFIG1 byte for a data rate, preserving the other bits of `current`. */
export function config1ForRate(rate: number, current = 0x96): number {
  const code = RATE_CODE[rate];
  if (code === undefined) {
    throw new RegisterValueError(`rate ${rate} not one of ${DATA_RATES.join(", ")}`);
  }
  return (current & 0xf8) | code;
}

export function rateFromConfig1(value: number): number {
  const rate = DATA_RATES[6 - (value & 0x07)];
  if (rate === undefined) throw new RegisterValueError("data-rate field 0b111 is reserved");
  return rate;
}

export function channelPoweredDown(chset: number): boolean {
  return (chset & 0x80) !== 0;
}

export type WriteState = "idle" | "pending" | "acked" | "error";

export interface PendingWrite {
  cmdId: number;
  addr: number;
  value: number;
}

/**
 * Panel state machine: writes move idle -> pending -> acked | error. The
 * panel never originates a write itself; callers pass user-initiated values
 * through prepare*() and report the server's answer back.
 */
export class RegisterPanelState {
  gains: number[];
  rate: number;
  state: WriteState = "idle";
  lastError: string | null = null;
  private pending: PendingWrite | null = null;

  constructor(gains: number[], rate: number) {
    this.gains = [...gains];
    this.rate = rate;
  }

  prepareGainWrite(channel: number, gain: number, cmdId: number): PendingWrite {
    const write = { cmdId, addr: chsetAddr(channel), value: chsetForGain(gain) };
    this.pending = write;
    this.state = "pending";
    this.lastError = null;
    return write;
  }

  prepareRateWrite(rate: number, cmdId: number): PendingWrite {
    const write = { cmdId, addr: REG_CONFIG1, value: config1ForRate(rate) };
    this.pending = write;
    this.state = "pending";
    this.lastError = null;
    return write;
  }

  prepareRawWrite(addr: number, value: number, cmdId: number): PendingWrite {
    if (addr < 0 || addr > LAST_REGISTER) {
      throw new RegisterValueError(`address 0x${addr.toString(16)} outside the register map`);
    }
    if (value < 0 || value > 0xff) throw new RegisterValueError(`value ${value} is not a byte`);
    const write = { cmdId, addr, value };
    this.pending = write;
    this.state = "pending";
    this.lastError = null;
    return write;
  }

  onAck(cmdId: number): void {
    if (!this.pending || this.pending.cmdId !== cmdId) return;
    const { addr, value } = this.pending;
    if (addr >= REG_CH1SET && addr < REG_CH1SET + 8) {
      this.gains[addr - REG_CH1SET] = gainFromChset(value);
    } else if (addr === REG_CONFIG1) {
      this.rate = rateFromConfig1(value);
    }
    this.pending = null;
    this.state = "acked";
  }

  onErr(cmdId: number, text: string): void {
    if (this.pending && this.pending.cmdId !== cmdId) return;
    this.pending = null;
    this.state = "error";
    this.lastError = text;
  }
}
