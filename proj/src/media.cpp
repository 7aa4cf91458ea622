#include "s2r/media.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace s2r {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
    FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

std::string frame_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%05d.png", t);
    return buf;
}
std::string mask_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "mask_%05d.png", t);
    return buf;
}
std::string flow_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "flow_%05d.flo", t);
    return buf;
}

void write_png(const std::string& path, const std::uint8_t* pix, int w, int h, int color_type,
               int channels) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw DataError("cannot open for write: " + path);
    FileCloser fc{f};
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng init failed: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("png write failed: " + path);
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[y] = const_cast<png_bytep>(pix + static_cast<std::size_t>(y) * w * channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void read_png(const std::string& path, std::vector<std::uint8_t>& pix, int& w, int& h,
              bool want_rgb) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw DataError("cannot open: " + path);
    FileCloser fc{f};
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng init failed: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("png read failed: " + path);
    }
    png_init_io(png, f);
    png_read_info(png, info);
    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (want_rgb) {
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(png);
        png_set_strip_alpha(png);
    } else {
        if (color != PNG_COLOR_TYPE_GRAY) {
            png_destroy_read_struct(&png, &info, nullptr);
            throw DataError("expected grayscale png: " + path);
        }
        if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    }
    png_read_update_info(png, info);
    const int channels = want_rgb ? 3 : 1;
    pix.assign(static_cast<std::size_t>(w) * h * channels, 0);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[y] = pix.data() + static_cast<std::size_t>(y) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace

void write_png_rgb(const std::string& path, const std::uint8_t* rgb, int w, int h) {
    write_png(path, rgb, w, h, PNG_COLOR_TYPE_RGB, 3);
}
void write_png_gray(const std::string& path, const std::uint8_t* gray, int w, int h) {
    write_png(path, gray, w, h, PNG_COLOR_TYPE_GRAY, 1);
}
void read_png_rgb(const std::string& path, std::vector<std::uint8_t>& rgb, int& w, int& h) {
    read_png(path, rgb, w, h, true);
}
void read_png_gray(const std::string& path, std::vector<std::uint8_t>& gray, int& w, int& h) {
    read_png(path, gray, w, h, false);
}

void write_flo(const std::string& path, const float* data, int w, int h) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for write: " + path);
    const float magic = 202021.25f;  // Middlebury "PIEH"
    os.write(reinterpret_cast<const char*>(&magic), 4);
    std::int32_t wi = w, hi = h;
    os.write(reinterpret_cast<const char*>(&wi), 4);
    os.write(reinterpret_cast<const char*>(&hi), 4);
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(w) * h * 2 * 4);
    if (!os) throw DataError("flow write failed: " + path);
}

void read_flo(const std::string& path, std::vector<float>& data, int& w, int& h) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    float magic = 0.f;
    std::int32_t wi = 0, hi = 0;
    is.read(reinterpret_cast<char*>(&magic), 4);
    is.read(reinterpret_cast<char*>(&wi), 4);
    is.read(reinterpret_cast<char*>(&hi), 4);
    if (!is || magic != 202021.25f || wi <= 0 || hi <= 0)
        throw DataError("bad flow file: " + path);
    w = wi;
    h = hi;
    data.assign(static_cast<std::size_t>(w) * h * 2, 0.f);
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(w) * h * 2 * 4);
    if (!is) throw DataError("flow truncated: " + path);
}

void write_clip_dir(const std::string& dir, const VideoClip& clip, const MaskClip* masks,
                    const FlowField* flow, std::uint64_t seed) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create dir: " + dir);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(clip.H) * clip.W * 3);
    for (int t = 0; t < clip.T; ++t) {
        const float* fr = clip.frame(t);
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_u8(fr[i]);
        write_png_rgb(dir + "/" + frame_name(t), buf.data(), clip.W, clip.H);
        if (masks)
            write_png_gray(dir + "/" + mask_name(t),
                           masks->data.data() + static_cast<std::size_t>(t) * clip.H * clip.W,
                           clip.W, clip.H);
    }
    if (flow)
        for (int t = 0; t < flow->T; ++t)
            write_flo(dir + "/" + flow_name(t),
                      flow->data.data() + static_cast<std::size_t>(t) * clip.H * clip.W * 2,
                      clip.W, clip.H);
    std::ofstream meta(dir + "/meta.txt");
    meta << "T=" << clip.T << "\nH=" << clip.H << "\nW=" << clip.W << "\nseed=" << seed << "\n";
    if (!meta) throw DataError("cannot write meta: " + dir);
}

ClipMeta read_clip_meta(const std::string& dir) {
    std::ifstream is(dir + "/meta.txt");
    if (!is) throw DataError("missing meta.txt in " + dir);
    ClipMeta m;
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "T") m.T = std::stoi(val);
        else if (key == "H") m.H = std::stoi(val);
        else if (key == "W") m.W = std::stoi(val);
        else if (key == "seed") m.seed = std::stoull(val);
    }
    if (m.T <= 0 || m.H <= 0 || m.W <= 0) throw DataError("invalid meta.txt in " + dir);
    return m;
}

VideoClip read_clip_dir(const std::string& dir) {
    ClipMeta m = read_clip_meta(dir);
    VideoClip clip(m.T, m.H, m.W);
    std::vector<std::uint8_t> buf;
    for (int t = 0; t < m.T; ++t) {
        int w = 0, h = 0;
        read_png_rgb(dir + "/" + frame_name(t), buf, w, h);
        if (w != m.W || h != m.H)
            throw DataError("frame size mismatch vs meta.txt: " + dir + "/" + frame_name(t));
        float* fr = clip.frame(t);
        for (std::size_t i = 0; i < buf.size(); ++i) fr[i] = from_u8(buf[i]);
    }
    return clip;
}

MaskClip read_clip_masks(const std::string& dir) {
    ClipMeta m = read_clip_meta(dir);
    MaskClip masks(m.T, m.H, m.W);
    std::vector<std::uint8_t> buf;
    for (int t = 0; t < m.T; ++t) {
        int w = 0, h = 0;
        read_png_gray(dir + "/" + mask_name(t), buf, w, h);
        if (w != m.W || h != m.H)
            throw DataError("mask size mismatch vs meta.txt: " + dir + "/" + mask_name(t));
        std::memcpy(masks.data.data() + static_cast<std::size_t>(t) * m.H * m.W, buf.data(),
                    buf.size());
    }
    return masks;
}

FlowField read_clip_flow(const std::string& dir) {
    ClipMeta m = read_clip_meta(dir);
    FlowField flow(m.T - 1, m.H, m.W);
    std::vector<float> buf;
    for (int t = 0; t + 1 < m.T; ++t) {
        int w = 0, h = 0;
        read_flo(dir + "/" + flow_name(t), buf, w, h);
        if (w != m.W || h != m.H) throw DataError("flow size mismatch: " + dir);
        std::memcpy(flow.data.data() + static_cast<std::size_t>(t) * m.H * m.W * 2, buf.data(),
                    buf.size() * sizeof(float));
    }
    return flow;
}

}  // namespace s2r
