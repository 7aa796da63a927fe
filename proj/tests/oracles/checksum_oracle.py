"""Independent ones-complement checksum oracle used to freeze test fixtures."""
import sys


def ones_complement_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
        total = (total & 0xFFFF) + (total >> 16)
    return (~total) & 0xFFFF


if __name__ == "__main__":
    hdr = bytes.fromhex("45 00 00 28 00 01 00 00 40 06 00 00 0A 00 00 01 0A 00 00 02".replace(" ", ""))
    print(hex(ones_complement_checksum(hdr)))
    print(hex(ones_complement_checksum(b"")))
    for arg in sys.argv[1:]:
        print(hex(ones_complement_checksum(bytes.fromhex(arg))))
