import struct


class FormatError(ValueError):
    """A binary file failed validation. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ByteReader:
    def __init__(self, data: bytes, what="file"):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n, field):
        end = self.pos + n
        if end > len(self.data):
            raise FormatError(
                f"{self.what} truncated while reading {field} "
                f"({n} bytes needed at {self.pos})",
                len(self.data),
            )
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt, field):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field))[0]

    def u8(self, field):
        return self.unpack("<B", field)

    def u32(self, field):
        return self.unpack("<I", field)

    def u64(self, field):
        return self.unpack("<Q", field)

    def remaining(self):
        return len(self.data) - self.pos
