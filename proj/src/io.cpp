#include "fwn/io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

namespace fwn {

namespace {

constexpr float kFloMagic = 202021.25f;

std::string lower_ext(const std::string& path) {
    auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return "";
    std::string ext = path.substr(dot + 1);
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext;
}

std::uint8_t quantize(double v) {
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));  // round half up
}

// ---- PNM (P5/P6) ----------------------------------------------------------

int pnm_read_token(std::istream& in) {
    // Skips whitespace and '#' comments, then parses one decimal integer.
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF || !std::isdigit(c)) throw FormatError("pnm: malformed header");
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = in.get();
    }
    return value;
}

struct Raw8 {
    int width = 0, height = 0, channels = 0;
    std::vector<std::uint8_t> bytes;
};

Raw8 read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("pnm: cannot open " + path);
    char p = 0, kind = 0;
    in.get(p);
    in.get(kind);
    if (p != 'P' || (kind != '5' && kind != '6')) throw FormatError("pnm: expected P5 or P6 in " + path);
    Raw8 out;
    out.channels = kind == '5' ? 1 : 3;
    out.width = pnm_read_token(in);
    out.height = pnm_read_token(in);
    int maxval = pnm_read_token(in);
    if (maxval != 255) throw FormatError("pnm: unsupported bit depth (maxval " + std::to_string(maxval) + ")");
    // Header terminates with exactly one whitespace byte, already consumed by the token parser.
    out.bytes.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
    in.read(reinterpret_cast<char*>(out.bytes.data()), static_cast<std::streamsize>(out.bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != out.bytes.size()) throw IoError("pnm: truncated payload in " + path);
    return out;
}

void write_pnm(const Raw8& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("pnm: cannot open " + path + " for writing");
    out << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.bytes.data()), static_cast<std::streamsize>(img.bytes.size()));
    if (!out) throw IoError("pnm: write failed for " + path);
}

// ---- PNG ------------------------------------------------------------------

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

Raw8 read_png(const std::string& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("png: cannot open " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw FormatError("png: bad signature in " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: allocation failure");
    }
    Raw8 out;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("png: decode error in " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    if (png_get_bit_depth(png, info) > 8)
        throw FormatError("png: unsupported bit depth in " + path);
    png_byte color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = static_cast<int>(png_get_channels(png, info));
    if (out.channels != 1 && out.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("png: unsupported channel count in " + path);
    }
    out.bytes.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
    rows.resize(out.height);
    for (int y = 0; y < out.height; ++y)
        rows[y] = out.bytes.data() + static_cast<std::size_t>(y) * out.width * out.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_png(const Raw8& img, const std::string& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("png: cannot open " + path + " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: allocation failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: encode error for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(img.height);
    std::vector<std::uint8_t> buf = img.bytes;
    for (int y = 0; y < img.height; ++y)
        rows[y] = buf.data() + static_cast<std::size_t>(y) * img.width * img.channels;
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Raw8 read_raw8(const std::string& path) {
    std::string ext = lower_ext(path);
    if (ext == "png") return read_png(path);
    if (ext == "pgm" || ext == "ppm") return read_pnm(path);
    throw FormatError("unsupported image extension: " + path);
}

void write_raw8(const Raw8& img, const std::string& path) {
    std::string ext = lower_ext(path);
    if (ext == "png") {
        write_png(img, path);
    } else if (ext == "pgm" || ext == "ppm") {
        if ((ext == "pgm") != (img.channels == 1))
            throw ContractError("pnm: channel count does not match extension " + path);
        write_pnm(img, path);
    } else {
        throw FormatError("unsupported image extension: " + path);
    }
}

}  // namespace

FlowField read_flo(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("flo: cannot open " + path);
    float magic = 0.0f;
    std::int32_t w = 0, h = 0;
    in.read(reinterpret_cast<char*>(&magic), 4);
    if (!in || magic != kFloMagic) throw FormatError("flo: bad magic in " + path);
    in.read(reinterpret_cast<char*>(&w), 4);
    in.read(reinterpret_cast<char*>(&h), 4);
    if (!in || w <= 0 || h <= 0) throw FormatError("flo: bad dimensions in " + path);
    std::vector<float> raw(static_cast<std::size_t>(w) * h * 2);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
    if (static_cast<std::size_t>(in.gcount()) != raw.size() * 4) throw IoError("flo: truncated payload in " + path);
    std::vector<double> vecs(raw.begin(), raw.end());
    return FlowField(h, w, std::move(vecs));
}

void write_flo(const FlowField& flow, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("flo: cannot open " + path + " for writing");
    float magic = kFloMagic;
    std::int32_t w = flow.width, h = flow.height;
    out.write(reinterpret_cast<const char*>(&magic), 4);
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(&h), 4);
    std::vector<float> raw(flow.vectors.begin(), flow.vectors.end());
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
    if (!out) throw IoError("flo: write failed for " + path);
}

ImageTensor read_image(const std::string& path) {
    Raw8 raw = read_raw8(path);
    ImageTensor img(raw.height, raw.width, raw.channels);
    for (std::size_t i = 0; i < raw.bytes.size(); ++i) img.data[i] = raw.bytes[i] / 255.0;
    return img;
}

void write_image(const ImageTensor& image, const std::string& path) {
    if (image.channels != 1 && image.channels != 3)
        throw ContractError("write_image: only 1- or 3-channel images supported");
    Raw8 raw;
    raw.width = image.width;
    raw.height = image.height;
    raw.channels = image.channels;
    raw.bytes.resize(image.data.size());
    for (std::size_t i = 0; i < image.data.size(); ++i) raw.bytes[i] = quantize(image.data[i]);
    write_raw8(raw, path);
}

SemanticLayout read_layout(const std::string& path, int num_classes) {
    Raw8 raw = read_raw8(path);
    if (raw.channels != 1) throw FormatError("layout: expected single channel in " + path);
    if (num_classes == 0) {
        int max_id = 0;
        for (std::uint8_t b : raw.bytes) max_id = std::max<int>(max_id, b);
        num_classes = max_id + 1;
    }
    return SemanticLayout(raw.height, raw.width, num_classes, std::move(raw.bytes));
}

void write_layout(const SemanticLayout& layout, const std::string& path) {
    Raw8 raw;
    raw.width = layout.width;
    raw.height = layout.height;
    raw.channels = 1;
    raw.bytes = layout.classes;
    write_raw8(raw, path);
}

}  // namespace fwn
