// Wire codec for the station's streaming protocol. Every frame is
//   magic "PEEG" | version u8 | type u8 | length u32 LE | body
// JSON bodies for HELLO/METRICS/CMD/ACK/ERR; DATA is binary with a
// channel-major f32 (or raw i32) payload. Mirrors docs/protocol.md; the
// fixtures in tests/protocol.test.ts are frozen bytes from the server side.

export const PROTO_VERSION = 1;
export const MAGIC = [0x50, 0x45, 0x45, 0x47]; // "PEEG"
export const HEADER_LEN = 10;
export const MAX_BODY = 16 * 1024 * 1024;
export const N_CHANNELS = 8;

export const enum MsgType {
  Hello = 1,
  Data = 2,
  Metrics = 3,
  Cmd = 4,
  Ack = 5,
  Err = 6,
}

export type CmdOp = "START" | "STOP" | "RREG" | "WREG" | "ANNOTATE" | "SET_SCENARIO";

export class ProtocolError extends Error {}

export interface HelloMsg {
  kind: "hello";
  fs: number;
  channelLabels: string[];
  gains: number[];
  vref: number;
  server: string;
  authRequired: boolean;
}

export interface DataMsg {
  kind: "data";
  seq: number;
  epoch: number;
  t0Ns: number;
  droppedBefore: number;
  raw: boolean;
  /** per-channel views, length N_CHANNELS */
  channels: Float32Array[] | Int32Array[];
  samplesPerChannel: number;
}

export interface MetricsMsg {
  kind: "metrics";
  streamTime: number;
  alphaPowerUv2: number[];
  eventCounts: Record<string, number>;
  produced: number;
  dropped: number;
  epoch: number;
}

export interface AckMsg {
  kind: "ack";
  id: number;
  result: Record<string, unknown>;
}

export interface ErrMsg {
  kind: "err";
  code: string;
  text: string;
  id: number | null;
}

export type Message = HelloMsg | DataMsg | MetricsMsg | AckMsg | ErrMsg;

const textDecoder = new TextDecoder();
const textEncoder = new TextEncoder();

export function encodeCmd(id: number, op: CmdOp, args: Record<string, unknown> = {}): ArrayBuffer {
  const body = textEncoder.encode(JSON.stringify({ id, op, args }));
  const frame = new Uint8Array(HEADER_LEN + body.length);
  frame.set(MAGIC, 0);
  frame[4] = PROTO_VERSION;
  frame[5] = MsgType.Cmd;
  new DataView(frame.buffer).setUint32(6, body.length, true);
  frame.set(body, HEADER_LEN);
  return frame.buffer;
}

function jsonBody(body: Uint8Array): Record<string, unknown> {
  let doc: unknown;
  try {
    doc = JSON.parse(textDecoder.decode(body));
  } catch (e) {
    throw new ProtocolError(`unparseable JSON body: ${e}`);
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new ProtocolError("JSON body must be an object");
  }
  return doc as Record<string, unknown>;
}

const DATA_HEAD = 33; // u64 seq, u32 epoch, u64 t0, u64 dropped, u8 flags, u32 n

function decodeData(view: DataView, body: Uint8Array): DataMsg {
  if (body.length < DATA_HEAD) throw new ProtocolError("data body shorter than its header");
  const base = body.byteOffset;
  const seq = Number(view.getBigUint64(base, true));
  const epoch = view.getUint32(base + 8, true);
  const t0Ns = Number(view.getBigUint64(base + 12, true));
  const droppedBefore = Number(view.getBigUint64(base + 20, true));
  const raw = (view.getUint8(base + 28) & 1) !== 0;
  const n = view.getUint32(base + 29, true);
  if (body.length !== DATA_HEAD + 4 * N_CHANNELS * n) {
    throw new ProtocolError(`data body is ${body.length} bytes, expected ${DATA_HEAD + 4 * N_CHANNELS * n}`);
  }
  // copy so channel views stay valid after the socket buffer is reused
  const payload = body.slice(DATA_HEAD);
  const channels: Float32Array[] | Int32Array[] = [];
  for (let ch = 0; ch < N_CHANNELS; ch++) {
    const chView = raw
      ? new Int32Array(payload.buffer, payload.byteOffset + 4 * ch * n, n)
      : new Float32Array(payload.buffer, payload.byteOffset + 4 * ch * n, n);
    (channels as unknown[]).push(chView);
  }
  return { kind: "data", seq, epoch, t0Ns, droppedBefore, raw, channels, samplesPerChannel: n };
}

export function decodeMessage(buffer: ArrayBuffer): Message {
  const bytes = new Uint8Array(buffer);
  if (bytes.length < HEADER_LEN) throw new ProtocolError("incomplete header");
  for (let i = 0; i < 4; i++) {
    if (bytes[i] !== MAGIC[i]) throw new ProtocolError(`bad magic at byte ${i}`);
  }
  const view = new DataView(buffer);
  const version = view.getUint8(4);
  if (version !== PROTO_VERSION) throw new ProtocolError(`protocol version ${version}`);
  const type = view.getUint8(5);
  const length = view.getUint32(6, true);
  if (length > MAX_BODY) throw new ProtocolError(`declared body of ${length} bytes`);
  if (bytes.length < HEADER_LEN + length) throw new ProtocolError("incomplete body");
  const body = bytes.subarray(HEADER_LEN, HEADER_LEN + length);

  switch (type) {
    case MsgType.Hello: {
      const doc = jsonBody(body);
      return {
        kind: "hello",
        fs: Number(doc.fs),
        channelLabels: (doc.channel_labels as string[]) ?? [],
        gains: (doc.gains as number[]) ?? [],
        vref: Number(doc.vref),
        server: String(doc.server ?? "peeg"),
        authRequired: Boolean(doc.auth_required),
      };
    }
    case MsgType.Data:
      return decodeData(view, body);
    case MsgType.Metrics: {
      const doc = jsonBody(body);
      return {
        kind: "metrics",
        streamTime: Number(doc.stream_time ?? 0),
        alphaPowerUv2: (doc.alpha_power_uv2 as number[]) ?? [],
        eventCounts: (doc.event_counts as Record<string, number>) ?? {},
        produced: Number(doc.produced ?? 0),
        dropped: Number(doc.dropped ?? 0),
        epoch: Number(doc.epoch ?? 0),
      };
    }
    case MsgType.Ack: {
      const doc = jsonBody(body);
      return { kind: "ack", id: Number(doc.id), result: (doc.result as Record<string, unknown>) ?? {} };
    }
    case MsgType.Err: {
      const doc = jsonBody(body);
      return {
        kind: "err",
        code: String(doc.code),
        text: String(doc.text ?? ""),
        id: doc.id === undefined || doc.id === null ? null : Number(doc.id),
      };
    }
    default:
      throw new ProtocolError(`message type ${type}`);
  }
}
