#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>
#include <zlib.h>

#include "physgen/core/array2.hpp"

// Minimal 8-bit grayscale PNG support on top of zlib. Enough for exporting
// fields for inspection and reading foam images back into the solvers.

namespace physgen::png {

namespace detail {

inline uint32_t crc32_of(const uint8_t* data, size_t n, uint32_t seed = 0) {
    return static_cast<uint32_t>(::crc32(seed, data, static_cast<uInt>(n)));
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_u32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void put_chunk(std::vector<uint8_t>& out, const char type[4],
                      const std::vector<uint8_t>& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = crc32_of(out.data() + start, out.size() - start);
    put_u32(out, crc);
}

} // namespace detail

// Encodes 8-bit grayscale pixels (row-major, rows x cols) as a PNG byte stream.
inline std::vector<uint8_t> encode_gray8(const std::vector<uint8_t>& pixels, int rows, int cols) {
    if (pixels.size() != static_cast<size_t>(rows) * cols)
        throw std::invalid_argument("png: pixel buffer does not match shape");
    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

    std::vector<uint8_t> ihdr;
    detail::put_u32(ihdr, static_cast<uint32_t>(cols));
    detail::put_u32(ihdr, static_cast<uint32_t>(rows));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(0); // color type: grayscale
    ihdr.push_back(0); // compression
    ihdr.push_back(0); // filter
    ihdr.push_back(0); // interlace
    detail::put_chunk(out, "IHDR", ihdr);

    // filter byte 0 per scanline
    std::vector<uint8_t> raw;
    raw.reserve(pixels.size() + rows);
    for (int r = 0; r < rows; ++r) {
        raw.push_back(0);
        raw.insert(raw.end(), pixels.begin() + static_cast<size_t>(r) * cols,
                   pixels.begin() + static_cast<size_t>(r + 1) * cols);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(bound);
    if (compress2(comp.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png: deflate failed");
    comp.resize(bound);
    detail::put_chunk(out, "IDAT", comp);
    detail::put_chunk(out, "IEND", {});
    return out;
}

struct Gray8 {
    int rows = 0, cols = 0;
    std::vector<uint8_t> pixels;
};

// Decodes an 8-bit grayscale PNG (color type 0, no interlace).
inline Gray8 decode_gray8(const std::vector<uint8_t>& bytes) {
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw std::runtime_error("png: bad signature");
    size_t pos = 8;
    Gray8 img;
    std::vector<uint8_t> idat;
    bool seen_ihdr = false;
    while (pos + 8 <= bytes.size()) {
        uint32_t len = detail::get_u32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("png: truncated chunk");
        std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
        const uint8_t* payload = bytes.data() + pos + 8;
        if (type == "IHDR") {
            img.cols = static_cast<int>(detail::get_u32(payload));
            img.rows = static_cast<int>(detail::get_u32(payload + 4));
            uint8_t depth = payload[8], color = payload[9], interlace = payload[12];
            if (depth != 8 || color != 0)
                throw std::runtime_error("png: only 8-bit grayscale supported");
            if (interlace != 0) throw std::runtime_error("png: interlaced images unsupported");
            seen_ihdr = true;
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (!seen_ihdr) throw std::runtime_error("png: missing IHDR");

    size_t raw_size = static_cast<size_t>(img.rows) * (img.cols + 1);
    std::vector<uint8_t> raw(raw_size);
    uLongf dest = static_cast<uLongf>(raw_size);
    if (uncompress(raw.data(), &dest, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        dest != raw_size)
        throw std::runtime_error("png: inflate failed");

    img.pixels.resize(static_cast<size_t>(img.rows) * img.cols);
    std::vector<uint8_t> prev(img.cols, 0);
    for (int r = 0; r < img.rows; ++r) {
        const uint8_t* line = raw.data() + static_cast<size_t>(r) * (img.cols + 1);
        uint8_t filter = line[0];
        uint8_t* dst = img.pixels.data() + static_cast<size_t>(r) * img.cols;
        for (int c = 0; c < img.cols; ++c) {
            int x = line[1 + c];
            int a = c > 0 ? dst[c - 1] : 0;
            int b = prev[c];
            int cc = c > 0 ? prev[c - 1] : 0;
            switch (filter) {
                case 0: break;
                case 1: x += a; break;
                case 2: x += b; break;
                case 3: x += (a + b) / 2; break;
                case 4: {
                    int p = a + b - cc;
                    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - cc);
                    x += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : cc);
                    break;
                }
                default: throw std::runtime_error("png: unknown filter");
            }
            dst[c] = static_cast<uint8_t>(x & 0xFF);
        }
        std::memcpy(prev.data(), dst, img.cols);
    }
    return img;
}

inline void write_gray8(const std::string& path, const std::vector<uint8_t>& pixels, int rows,
                        int cols) {
    auto bytes = encode_gray8(pixels, rows, cols);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png: cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("png: write failed: " + path);
}

// Writes a scalar field as grayscale, mapping [lo, hi] to [0, 255].
inline void write_field(const std::string& path, const Array2& field, double lo = 0.0,
                        double hi = 1.0) {
    std::vector<uint8_t> px(field.size());
    double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
    for (size_t i = 0; i < field.size(); ++i) {
        double v = (field[i] - lo) * scale;
        px[i] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
    }
    write_gray8(path, px, field.rows(), field.cols());
}

inline Gray8 read_gray8(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png: cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_gray8(bytes);
}

// Reads a grayscale PNG as a field in [0, 1].
inline Array2 read_field(const std::string& path) {
    Gray8 img = read_gray8(path);
    Array2 out(img.rows, img.cols);
    for (size_t i = 0; i < img.pixels.size(); ++i) out[i] = img.pixels[i] / 255.0;
    return out;
}

} // namespace physgen::png
