import { describe, expect, it } from "vitest";
import {
  decodeMessage, encodeCmd, ProtocolError, MAX_BODY, HEADER_LEN,
} from "../src/protocol.js";

// Frames produced by the server-side codec, frozen as hex. Decoding them
// here pins cross-implementation wire compatibility.
const FIXTURES = {
  hello:
    "504545470101b30000007b226673223a203235302c20226368616e6e656c5f6c6162656c73223a205b22467a222c2022437a222c2022507a222c20224f7a222c2022467031222c2022467032222c20224333222c20224334225d2c20226761696e73223a205b32342c2032342c2032342c2032342c2032342c2032342c2032342c2032345d2c202276726566223a20342e352c2022736572766572223a202270656567222c2022617574685f7265717569726564223a2066616c73657d",
  data:
    "504545470102610000000700000000000000010000000027b92900000000fa000000000000000002000000000000000000803e0000003f0000403f0000803f0000a03f0000c03f0000e03f0000004000001040000020400000304000004040000050400000604000007040",
  metrics:
    "504545470103a70000007b2273747265616d5f74696d65223a20332e302c2022616c7068615f706f7765725f757632223a205b312e352c20312e352c20312e352c20312e352c20312e352c20312e352c20312e352c20312e355d2c20226576656e745f636f756e7473223a207b22626c696e6b73223a20322c20226368657773223a20317d2c202270726f6475636564223a203735302c202264726f70706564223a20302c202265706f6368223a20307d",
  ack:
    "504545470105390000007b226964223a20332c2022726573756c74223a207b2261646472223a20352c202276616c7565223a2038302c202265706f6368223a20317d7d",
  err:
    "5045454701064f0000007b22636f6465223a2022494e56414c49445f524547222c202274657874223a2022434831534554206761696e206669656c64203062313131206973207265736572766564222c20226964223a20347d",
};

function fromHex(hex: string): ArrayBuffer {
  const bytes = new Uint8Array(hex.length / 2);
  for (let i = 0; i < bytes.length; i++) {
    bytes[i] = parseInt(hex.slice(2 * i, 2 * i + 2), 16);
  }
  return bytes.buffer;
}

describe("server fixtures", () => {
  it("decodes HELLO", () => {
    const msg = decodeMessage(fromHex(FIXTURES.hello));
    expect(msg.kind).toBe("hello");
    if (msg.kind !== "hello") return;
    expect(msg.fs).toBe(250);
    expect(msg.channelLabels).toEqual(["Fz", "Cz", "Pz", "Oz", "Fp1", "Fp2", "C3", "C4"]);
    expect(msg.gains).toEqual([24, 24, 24, 24, 24, 24, 24, 24]);
    expect(msg.vref).toBe(4.5);
    expect(msg.authRequired).toBe(false);
  });

  it("decodes DATA with exact payload", () => {
    const msg = decodeMessage(fromHex(FIXTURES.data));
    expect(msg.kind).toBe("data");
    if (msg.kind !== "data") return;
    expect(msg.seq).toBe(7);
    expect(msg.epoch).toBe(1);
    expect(msg.t0Ns).toBe(700_000_000);
    expect(msg.droppedBefore).toBe(250);
    expect(msg.raw).toBe(false);
    expect(msg.samplesPerChannel).toBe(2);
    // payload was arange(16)/4 channel-major
    expect(Array.from(msg.channels[0])).toEqual([0, 0.25]);
    expect(Array.from(msg.channels[7])).toEqual([3.5, 3.75]);
  });

  it("decodes METRICS", () => {
    const msg = decodeMessage(fromHex(FIXTURES.metrics));
    expect(msg.kind).toBe("metrics");
    if (msg.kind !== "metrics") return;
    expect(msg.streamTime).toBe(3.0);
    expect(msg.alphaPowerUv2).toHaveLength(8);
    expect(msg.eventCounts.blinks).toBe(2);
    expect(msg.produced).toBe(750);
  });

  it("decodes ACK and ERR", () => {
    const ack = decodeMessage(fromHex(FIXTURES.ack));
    expect(ack.kind).toBe("ack");
    if (ack.kind === "ack") {
      expect(ack.id).toBe(3);
      expect(ack.result.epoch).toBe(1);
    }
    const err = decodeMessage(fromHex(FIXTURES.err));
    expect(err.kind).toBe("err");
    if (err.kind === "err") {
      expect(err.code).toBe("INVALID_REG");
      expect(err.id).toBe(4);
    }
  });
});

describe("encodeCmd", () => {
  it("emits a frame the decoder cannot mistake", () => {
    const frame = encodeCmd(3, "WREG", { addr: 5, value: 0x50 });
    const bytes = new Uint8Array(frame);
    expect(Array.from(bytes.subarray(0, 4))).toEqual([0x50, 0x45, 0x45, 0x47]);
    expect(bytes[4]).toBe(1);
    expect(bytes[5]).toBe(4);
    const length = new DataView(frame).getUint32(6, true);
    expect(length).toBe(frame.byteLength - HEADER_LEN);
    const body = JSON.parse(new TextDecoder().decode(bytes.subarray(HEADER_LEN)));
    expect(body).toEqual({ id: 3, op: "WREG", args: { addr: 5, value: 0x50 } });
  });

  it("matches the server-side CMD fixture byte for byte", () => {
    // server encodes {"id": 3, "op": "WREG", "args": {"addr": 5, "value": 80}}
    // with different JSON whitespace, so compare decoded structure instead
    const serverCmd =
      "504545470104390000007b226964223a20332c20226f70223a202257524547222c202261726773223a207b2261646472223a20352c202276616c7565223a2038307d7d";
    const bytes = new Uint8Array(fromHex(serverCmd));
    const body = JSON.parse(new TextDecoder().decode(bytes.subarray(HEADER_LEN)));
    const mine = new Uint8Array(encodeCmd(3, "WREG", { addr: 5, value: 80 }));
    const myBody = JSON.parse(new TextDecoder().decode(mine.subarray(HEADER_LEN)));
    expect(myBody).toEqual(body);
  });
});

describe("defensive decoding", () => {
  it("rejects bad magic", () => {
    const bytes = new Uint8Array(fromHex(FIXTURES.ack));
    bytes[0] = 0x58;
    expect(() => decodeMessage(bytes.buffer)).toThrow(ProtocolError);
  });

  it("rejects bad version and unknown type", () => {
    const v = new Uint8Array(fromHex(FIXTURES.ack));
    v[4] = 9;
    expect(() => decodeMessage(v.buffer)).toThrow(ProtocolError);
    const t = new Uint8Array(fromHex(FIXTURES.ack));
    t[5] = 42;
    expect(() => decodeMessage(t.buffer)).toThrow(ProtocolError);
  });

  it("rejects truncated and overflowing frames", () => {
    const bytes = new Uint8Array(fromHex(FIXTURES.data));
    expect(() => decodeMessage(bytes.buffer.slice(0, 20))).toThrow(ProtocolError);
    const overflow = new Uint8Array(HEADER_LEN);
    overflow.set([0x50, 0x45, 0x45, 0x47, 1, 5]);
    new DataView(overflow.buffer).setUint32(6, MAX_BODY + 1, true);
    expect(() => decodeMessage(overflow.buffer)).toThrow(ProtocolError);
  });

  it("never throws anything but ProtocolError on random bytes", () => {
    let seed = 12345;
    const rand = () => (seed = (seed * 1103515245 + 12345) & 0x7fffffff) / 0x7fffffff;
    for (let trial = 0; trial < 5000; trial++) {
      const len = Math.floor(rand() * 48);
      const bytes = new Uint8Array(len);
      for (let i = 0; i < len; i++) bytes[i] = Math.floor(rand() * 256);
      try {
        decodeMessage(bytes.buffer);
      } catch (e) {
        expect(e).toBeInstanceOf(ProtocolError);
      }
    }
  });
});
