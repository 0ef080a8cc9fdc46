"""ADS1299 register bank, SPI command set, data-frame codec and code->microvolt scaling.

Everything here is a pure, value-semantics model of the converter: registers are
held in an immutable bank, frames are plain bytes, and all constants (addresses,
reset values, gain/data-rate encodings, opcodes, frame layout) come from the
ADS1299 datasheet. See docs/registers.md for the bit-field tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

N_CHANNELS = 8
FRAME_LEN = 27  # 3 status bytes + 8 channels x 3 bytes
CODE_MIN = -(1 << 23)
CODE_MAX = (1 << 23) - 1
STATUS_SYNC_NIBBLE = 0xC  # top 4 bits of the status word in RDATAC frames
DEVICE_ID = 0x3E  # ID register value for the 8-channel part
DEFAULT_VREF = 4.5  # internal reference, volts


class Ads1299Error(Exception):
    """Base for all converter-model errors."""


class WrongLength(Ads1299Error):
    pass


class BadSyncNibble(Ads1299Error):
    """Status word does not start with the fixed 0b1100 pattern (SPI desync)."""


class CodeOutOfRange(Ads1299Error):
    pass


class UnknownRegister(Ads1299Error):
    pass


class ReadOnlyRegister(Ads1299Error):
    pass


class InvalidFieldEncoding(Ads1299Error):
    pass


class InvalidAddressRange(Ads1299Error):
    pass


class Reg(IntEnum):
    ID = 0x00
    CONFIG1 = 0x01
    CONFIG2 = 0x02
    CONFIG3 = 0x03
    LOFF = 0x04
    CH1SET = 0x05
    CH2SET = 0x06
    CH3SET = 0x07
    CH4SET = 0x08
    CH5SET = 0x09
    CH6SET = 0x0A
    CH7SET = 0x0B
    CH8SET = 0x0C
    BIAS_SENSP = 0x0D
    BIAS_SENSN = 0x0E
    LOFF_SENSP = 0x0F
    LOFF_SENSN = 0x10
    LOFF_FLIP = 0x11
    LOFF_STATP = 0x12
    LOFF_STATN = 0x13
    GPIO = 0x14
    MISC1 = 0x15
    MISC2 = 0x16
    CONFIG4 = 0x17


@dataclass(frozen=True)
class RegisterDef:
    name: str
    reset: int
    read_only: bool = False
    # bits in reserved_mask must equal reserved_value on every write
    reserved_mask: int = 0x00
    reserved_value: int = 0x00


# Reserved-bit patterns per the datasheet register map.
REGISTER_MAP: dict[int, RegisterDef] = {
    Reg.ID: RegisterDef("ID", DEVICE_ID, read_only=True),
    Reg.CONFIG1: RegisterDef("CONFIG1", 0x96, reserved_mask=0x98, reserved_value=0x90),
    Reg.CONFIG2: RegisterDef("CONFIG2", 0xC0, reserved_mask=0xE8, reserved_value=0xC0),
    Reg.CONFIG3: RegisterDef("CONFIG3", 0x60, reserved_mask=0x60, reserved_value=0x60),
    Reg.LOFF: RegisterDef("LOFF", 0x00, reserved_mask=0x10, reserved_value=0x00),
    **{
        Reg.CH1SET + ch: RegisterDef(f"CH{ch + 1}SET", 0x61)
        for ch in range(N_CHANNELS)
    },
    Reg.BIAS_SENSP: RegisterDef("BIAS_SENSP", 0x00),
    Reg.BIAS_SENSN: RegisterDef("BIAS_SENSN", 0x00),
    Reg.LOFF_SENSP: RegisterDef("LOFF_SENSP", 0x00),
    Reg.LOFF_SENSN: RegisterDef("LOFF_SENSN", 0x00),
    Reg.LOFF_FLIP: RegisterDef("LOFF_FLIP", 0x00),
    Reg.LOFF_STATP: RegisterDef("LOFF_STATP", 0x00, read_only=True),
    Reg.LOFF_STATN: RegisterDef("LOFF_STATN", 0x00, read_only=True),
    Reg.GPIO: RegisterDef("GPIO", 0x0F),
    Reg.MISC1: RegisterDef("MISC1", 0x00, reserved_mask=0xDF, reserved_value=0x00),
    Reg.MISC2: RegisterDef("MISC2", 0x00, reserved_mask=0xFF, reserved_value=0x00),
    Reg.CONFIG4: RegisterDef("CONFIG4", 0x00, reserved_mask=0xF5, reserved_value=0x00),
}

LAST_REGISTER = max(REGISTER_MAP)

# CHnSET[6:4] -> PGA gain
GAIN_CODES = {0b000: 1, 0b001: 2, 0b010: 4, 0b011: 6, 0b100: 8, 0b101: 12, 0b110: 24}
GAIN_TO_CODE = {g: c for c, g in GAIN_CODES.items()}
VALID_GAINS = tuple(sorted(GAIN_TO_CODE))

# CONFIG1[2:0] -> output data rate, samples per second
DATA_RATE_CODES = {
    0b000: 16000,
    0b001: 8000,
    0b010: 4000,
    0b011: 2000,
    0b100: 1000,
    0b101: 500,
    0b110: 250,
}
DATA_RATE_TO_CODE = {r: c for c, r in DATA_RATE_CODES.items()}
SUPPORTED_RATES = tuple(sorted(DATA_RATE_TO_CODE))


def _validate_write(addr: int, value: int) -> None:
    if addr not in REGISTER_MAP:
        raise UnknownRegister(f"no register at address 0x{addr:02X}")
    rdef = REGISTER_MAP[addr]
    if rdef.read_only:
        raise ReadOnlyRegister(f"{rdef.name} (0x{addr:02X}) is read-only")
    if not 0 <= value <= 0xFF:
        raise InvalidFieldEncoding(f"register value {value} is not a byte")
    if value & rdef.reserved_mask != rdef.reserved_value:
        raise InvalidFieldEncoding(
            f"{rdef.name}: reserved bits (mask 0x{rdef.reserved_mask:02X}) must "
            f"read 0x{rdef.reserved_value:02X}"
        )
    if addr == Reg.CONFIG1 and (value & 0x07) not in DATA_RATE_CODES:
        raise InvalidFieldEncoding("CONFIG1 data-rate field 0b111 is reserved")
    if Reg.CH1SET <= addr <= Reg.CH8SET and (value >> 4) & 0x07 not in GAIN_CODES:
        raise InvalidFieldEncoding(f"{rdef.name} gain field 0b111 is reserved")


@dataclass(frozen=True)
class RegisterFile:
    """Immutable snapshot of the full register bank (addresses 0x00..0x17).

    Writes return a new bank; the reset/default constructors bake in the
    datasheet power-on values.
    """

    values: tuple[int, ...]

    @classmethod
    def reset(cls) -> "RegisterFile":
        """Power-on reset state: 250 SPS, gain 24, inputs shorted."""
        return cls(tuple(REGISTER_MAP[a].reset for a in range(LAST_REGISTER + 1)))

    @classmethod
    def default_config(cls) -> "RegisterFile":
        """Operating defaults: 250 SPS, gain 24, all channels on normal input,
        internal reference buffer enabled."""
        rf = cls.reset().write(Reg.CONFIG3, 0xE0)
        for ch in range(N_CHANNELS):
            rf = rf.write(Reg.CH1SET + ch, 0x60)
        return rf

    def read(self, addr: int) -> int:
        if addr not in REGISTER_MAP:
            raise UnknownRegister(f"no register at address 0x{addr:02X}")
        return self.values[addr]

    def write(self, addr: int, value: int) -> "RegisterFile":
        _validate_write(addr, value)
        updated = list(self.values)
        updated[addr] = value
        return RegisterFile(tuple(updated))

    # -- decoded views ------------------------------------------------------

    def sample_rate(self) -> int:
        return DATA_RATE_CODES[self.values[Reg.CONFIG1] & 0x07]

    def gain_of(self, channel: int) -> int:
        self._check_channel(channel)
        return GAIN_CODES[(self.values[Reg.CH1SET + channel] >> 4) & 0x07]

    def gains(self) -> tuple[int, ...]:
        return tuple(self.gain_of(ch) for ch in range(N_CHANNELS))

    def channel_enabled(self, channel: int) -> bool:
        self._check_channel(channel)
        return not self.values[Reg.CH1SET + channel] & 0x80

    def with_gain(self, channel: int, gain: int) -> "RegisterFile":
        self._check_channel(channel)
        if gain not in GAIN_TO_CODE:
            raise InvalidFieldEncoding(f"gain {gain} not in {VALID_GAINS}")
        addr = Reg.CH1SET + channel
        value = (self.values[addr] & 0x8F) | (GAIN_TO_CODE[gain] << 4)
        return self.write(addr, value)

    def with_sample_rate(self, rate: int) -> "RegisterFile":
        if rate not in DATA_RATE_TO_CODE:
            raise InvalidFieldEncoding(f"data rate {rate} not in {SUPPORTED_RATES}")
        value = (self.values[Reg.CONFIG1] & 0xF8) | DATA_RATE_TO_CODE[rate]
        return self.write(Reg.CONFIG1, value)

    @staticmethod
    def _check_channel(channel: int) -> None:
        if not 0 <= channel < N_CHANNELS:
            raise UnknownRegister(f"channel {channel} out of range 0..7")


# -- SPI command set ---------------------------------------------------------


class Command(IntEnum):
    WAKEUP = 0x02
    STANDBY = 0x04
    RESET = 0x06
    START = 0x08
    STOP = 0x0A
    RDATAC = 0x10
    SDATAC = 0x11
    RDATA = 0x12
    RREG = 0x20  # | start address, second byte = count - 1
    WREG = 0x40


def command_opcode(cmd: Command, addr: int = 0, count: int = 1) -> bytes:
    """Opcode byte(s) for a command; RREG/WREG take a register range."""
    if cmd in (Command.RREG, Command.WREG):
        if count < 1:
            raise InvalidAddressRange("register count must be >= 1")
        if addr not in REGISTER_MAP or addr + count - 1 > LAST_REGISTER:
            raise InvalidAddressRange(
                f"registers 0x{addr:02X}..0x{addr + count - 1:02X} outside map"
            )
        return bytes([cmd | addr, count - 1])
    return bytes([cmd])


# -- data frames -------------------------------------------------------------


@dataclass(frozen=True)
class DataFrame:
    """One RDATAC read: 24-bit status word plus 8 signed 24-bit channel codes."""

    status: int
    codes: tuple[int, ...]

    @property
    def loff_statp(self) -> int:
        return (self.status >> 12) & 0xFF

    @property
    def loff_statn(self) -> int:
        return (self.status >> 4) & 0xFF

    @property
    def gpio(self) -> int:
        return self.status & 0x0F


def status_word(loff_statp: int = 0, loff_statn: int = 0, gpio: int = 0) -> int:
    """Assemble the 24-bit status word: 1100 | LOFF_STATP | LOFF_STATN | GPIO[7:4]."""
    return (
        (STATUS_SYNC_NIBBLE << 20)
        | ((loff_statp & 0xFF) << 12)
        | ((loff_statn & 0xFF) << 4)
        | (gpio & 0x0F)
    )


def _sign_extend_24(raw: int) -> int:
    return raw - (1 << 24) if raw & 0x800000 else raw


def decode_frame(raw: bytes, check_sync: bool = True) -> DataFrame:
    """Decode a 27-byte RDATAC frame into status + sign-extended channel codes.

    check_sync=False skips the fixed-nibble test for replaying legacy captures.
    """
    if len(raw) != FRAME_LEN:
        raise WrongLength(f"frame is {len(raw)} bytes, expected {FRAME_LEN}")
    status = int.from_bytes(raw[0:3], "big")
    if check_sync and (status >> 20) != STATUS_SYNC_NIBBLE:
        raise BadSyncNibble(
            f"status nibble 0x{status >> 20:X}, expected 0x{STATUS_SYNC_NIBBLE:X}"
        )
    codes = tuple(
        _sign_extend_24(int.from_bytes(raw[3 + 3 * ch : 6 + 3 * ch], "big"))
        for ch in range(N_CHANNELS)
    )
    return DataFrame(status, codes)


def encode_frame(frame: DataFrame) -> bytes:
    """Serialize a DataFrame to the 27-byte wire layout (big-endian triples)."""
    if len(frame.codes) != N_CHANNELS:
        raise WrongLength(f"expected {N_CHANNELS} channel codes")
    out = bytearray((frame.status & 0xFFFFFF).to_bytes(3, "big"))
    for code in frame.codes:
        if not CODE_MIN <= code <= CODE_MAX:
            raise CodeOutOfRange(f"code {code} outside signed 24-bit range")
        out += (code & 0xFFFFFF).to_bytes(3, "big")
    return bytes(out)


# -- code <-> microvolt conversion -------------------------------------------
#
# The per-gain scale is quantized to 27 significant bits and every other gain
# is derived from the gain-24 base by an exact integer factor. A 24-bit code
# times a <=29-bit scale fits a float64 mantissa, so conversions are exact:
# linearity holds to the bit and changing gain rescales samples by an exact
# ratio. The quantization moves the scale by <= 2^-27 relative (~7.5e-9),
# far below electrode noise.

_GAIN_FACTOR = {1: 24, 2: 12, 4: 6, 6: 4, 8: 3, 12: 2, 24: 1}


def _quantize_scale(x: float, bits: int = 27) -> float:
    mantissa, exponent = math.frexp(x)
    return math.ldexp(round(mantissa * (1 << bits)), exponent - bits)


def _scale_uv(vref: float, gain: int) -> float:
    base = _quantize_scale((vref / 24) / CODE_MAX * 1e6)
    return base * _GAIN_FACTOR[gain]


@dataclass(frozen=True)
class ConversionParams:
    """Input-referred scale: full-scale input is vref/gain volts at code 2^23-1."""

    vref: float = DEFAULT_VREF
    gain: int = 24

    def __post_init__(self) -> None:
        if self.vref <= 0:
            raise InvalidFieldEncoding("vref must be positive")
        if self.gain not in GAIN_TO_CODE:
            raise InvalidFieldEncoding(f"gain {self.gain} not in {VALID_GAINS}")

    @property
    def uv_per_code(self) -> float:
        return _scale_uv(self.vref, self.gain)


def code_to_microvolts(code: int, params: ConversionParams) -> float:
    """Linear scale; exact 0 at code 0 and vref/gain volts at positive full scale."""
    return code * params.uv_per_code


def microvolts_to_code(uv: float, params: ConversionParams) -> int:
    """Inverse scale, rounded to nearest code and clamped to the 24-bit range."""
    code = round(uv / params.uv_per_code)
    return max(CODE_MIN, min(CODE_MAX, code))


def codes_to_microvolts(
    codes: np.ndarray, gains: Sequence[int] | Iterable[int], vref: float = DEFAULT_VREF
) -> np.ndarray:
    """Vectorized conversion of an (8, n) code array with per-channel gains."""
    scale = np.array([_scale_uv(vref, g) for g in gains], dtype=np.float64).reshape(-1, 1)
    return codes.astype(np.float64) * scale


def microvolts_to_codes(
    uv: np.ndarray, gains: Sequence[int] | Iterable[int], vref: float = DEFAULT_VREF
) -> np.ndarray:
    """Vectorized inverse of codes_to_microvolts, rounded and clamped to int32."""
    scale = np.array([_scale_uv(vref, g) for g in gains], dtype=np.float64).reshape(-1, 1)
    codes = np.rint(uv / scale)
    return np.clip(codes, CODE_MIN, CODE_MAX).astype(np.int32)
