#include "lrd/data/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "lrd/util/crc32.hpp"

namespace lrd {

namespace {

void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4], const std::vector<std::uint8_t>& payload) {
    put_u32be(out, static_cast<std::uint32_t>(payload.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    put_u32be(out, crc32(out.data() + crc_start, out.size() - crc_start));
}

constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_png_rgb8(const std::string& path, const Tensor<float>& pixels) {
    if (pixels.rank() != 3 || pixels.dim(0) != 3)
        throw ShapeError("write_png: expected (3,H,W), got " + shape_str(pixels.shape()));
    const std::int64_t h = pixels.dim(1), w = pixels.dim(2);

    // filter 0 rows, interleaved RGB
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(h * (1 + w * 3)));
    for (std::int64_t y = 0; y < h; ++y) {
        std::uint8_t* row = raw.data() + y * (1 + w * 3);
        row[0] = 0;
        for (std::int64_t x = 0; x < w; ++x)
            for (std::int64_t c = 0; c < 3; ++c) {
                const float v = pixels.data()[(c * h + y) * w + x];
                const float clamped = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
                row[1 + x * 3 + c] = static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
            }
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("write_png: deflate failed");
    compressed.resize(bound);

    std::vector<std::uint8_t> file(kSignature, kSignature + 8);
    std::vector<std::uint8_t> ihdr;
    put_u32be(ihdr, static_cast<std::uint32_t>(w));
    put_u32be(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type RGB
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // no interlace
    append_chunk(file, "IHDR", ihdr);
    append_chunk(file, "IDAT", compressed);
    append_chunk(file, "IEND", {});

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("write_png: cannot open '" + path + "'");
    os.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
    if (!os) throw IoError("write_png: write failure on '" + path + "'");
}

Tensor<float> read_png_rgb8(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("read_png: cannot open '" + path + "'");
    std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (file.size() < 8 || std::memcmp(file.data(), kSignature, 8) != 0)
        throw IoError("read_png: '" + path + "' is not a PNG file");

    std::size_t pos = 8;
    std::uint32_t w = 0, h = 0;
    int color_type = -1;
    std::vector<std::uint8_t> idat;
    while (pos + 8 <= file.size()) {
        const std::uint32_t len = get_u32be(file.data() + pos);
        if (pos + 12 + len > file.size()) throw IoError("read_png: truncated chunk in '" + path + "'");
        const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
        const std::uint8_t* payload = file.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            w = get_u32be(payload);
            h = get_u32be(payload + 4);
            const int bit_depth = payload[8];
            color_type = payload[9];
            if (bit_depth != 8) throw IoError("read_png: only 8-bit images supported");
            if (color_type != 0 && color_type != 2 && color_type != 6)
                throw IoError("read_png: unsupported color type " + std::to_string(color_type));
            if (payload[12] != 0) throw IoError("read_png: interlaced images unsupported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (w == 0 || h == 0 || idat.empty()) throw IoError("read_png: missing image data in '" + path + "'");

    const int channels = color_type == 0 ? 1 : (color_type == 2 ? 3 : 4);
    const std::size_t stride = 1 + static_cast<std::size_t>(w) * channels;
    std::vector<std::uint8_t> raw(stride * h);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw IoError("read_png: inflate failed for '" + path + "'");

    // undo per-row filters in place
    const int bpp = channels;
    for (std::uint32_t y = 0; y < h; ++y) {
        std::uint8_t* row = raw.data() + y * stride + 1;
        const std::uint8_t* prev = y ? raw.data() + (y - 1) * stride + 1 : nullptr;
        const int filter = raw[y * stride];
        for (std::uint32_t x = 0; x < w * channels; ++x) {
            const int a = x >= static_cast<std::uint32_t>(bpp) ? row[x - bpp] : 0;
            const int b = prev ? prev[x] : 0;
            const int c = (prev && x >= static_cast<std::uint32_t>(bpp)) ? prev[x - bpp] : 0;
            int v = row[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw IoError("read_png: bad filter byte in '" + path + "'");
            }
            row[x] = static_cast<std::uint8_t>(v);
        }
    }

    Tensor<float> out = Tensor<float>::zeros({3, static_cast<std::int64_t>(h), static_cast<std::int64_t>(w)});
    for (std::uint32_t y = 0; y < h; ++y) {
        const std::uint8_t* row = raw.data() + y * stride + 1;
        for (std::uint32_t x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const std::uint8_t v = channels == 1 ? row[x] : row[x * channels + std::min(c, channels - 1)];
                out.data()[(c * h + y) * w + x] = static_cast<float>(v) / 255.0f;
            }
    }
    return out;
}

}  // namespace lrd
