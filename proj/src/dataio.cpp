#include "dsnet/dataio.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dsnet/rng.hpp"
#include "dsnet/textfmt.hpp"

namespace dsnet {

// ---- class taxonomy ---------------------------------------------------------

namespace {

const std::array<std::string, 8> kClassNames = {"D00", "D01", "D10", "D11",
                                                "D20", "D40", "D43", "D44"};

}  // namespace

std::span<const std::string> class_names() { return kClassNames; }

int class_index(const std::string& name) {
    for (std::size_t i = 0; i < kClassNames.size(); ++i)
        if (kClassNames[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("taxonomy: unknown class '" + name + "'");
}

const std::string& class_name(int index) {
    if (index < 0 || index >= static_cast<int>(kClassNames.size()))
        throw std::invalid_argument("taxonomy: class index " + std::to_string(index) +
                                    " out of range");
    return kClassNames[static_cast<std::size_t>(index)];
}

// ---- annotations --------------------------------------------------------------

Box to_center_box(const AnnoBox& a) {
    Box b;
    b.cx = (a.x1 + a.x2) * 0.5f;
    b.cy = (a.y1 + a.y2) * 0.5f;
    b.w = a.x2 - a.x1;
    b.h = a.y2 - a.y1;
    return b;
}

AnnoBox from_center_box(const Box& b, int class_id) {
    validate_box(b, "from_center_box");
    AnnoBox a;
    a.x1 = b.x1();
    a.y1 = b.y1();
    a.x2 = b.x2();
    a.y2 = b.y2();
    a.class_id = class_id;
    return a;
}

// ---- VOC-style XML ------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

struct TagSlice {
    std::string content;
    std::size_t end = 0;  // position just past the closing tag
    bool found = false;
};

TagSlice tag_content(const std::string& xml, const std::string& tag, std::size_t from,
                     const std::string& source) {
    TagSlice slice;
    const std::string open = "<" + tag + ">";
    const std::string close = "</" + tag + ">";
    const std::size_t o = xml.find(open, from);
    if (o == std::string::npos) return slice;
    const std::size_t c = xml.find(close, o + open.size());
    if (c == std::string::npos)
        throw std::invalid_argument("voc: " + source + ": <" + tag + "> is never closed");
    slice.content = xml.substr(o + open.size(), c - o - open.size());
    slice.end = c + close.size();
    slice.found = true;
    return slice;
}

TagSlice require_tag(const std::string& xml, const std::string& tag, const std::string& source,
                     const std::string& where) {
    TagSlice slice = tag_content(xml, tag, 0, source);
    if (!slice.found)
        throw std::invalid_argument("voc: " + source + ": missing <" + tag + ">" +
                                    (where.empty() ? "" : " in " + where));
    return slice;
}

double parse_number(const std::string& raw, const std::string& source, const std::string& what) {
    const std::string s = trim(raw);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v))
        throw std::invalid_argument("voc: " + source + ": " + what + " is not a number: '" + s +
                                    "'");
    return v;
}

int parse_dim(const std::string& raw, const std::string& source, const std::string& what) {
    const double v = parse_number(raw, source, what);
    if (v < 1.0 || v > 65536.0 || v != std::floor(v))
        throw std::invalid_argument("voc: " + source + ": " + what + " must be a positive "
                                    "integer, got '" + trim(raw) + "'");
    return static_cast<int>(v);
}

}  // namespace

VocParseResult parse_voc(const std::string& xml, const std::string& source) {
    const TagSlice root = require_tag(xml, "annotation", source, "");
    VocParseResult res;

    const TagSlice fname = require_tag(root.content, "filename", source, "<annotation>");
    std::string id = trim(fname.content);
    const std::size_t dot = id.find_last_of('.');
    if (dot != std::string::npos) id = id.substr(0, dot);
    if (id.empty())
        throw std::invalid_argument("voc: " + source + ": empty <filename>");
    res.anno.id = id;

    const TagSlice size = require_tag(root.content, "size", source, "<annotation>");
    res.anno.width = parse_dim(require_tag(size.content, "width", source, "<size>").content,
                               source, "<width>");
    res.anno.height = parse_dim(require_tag(size.content, "height", source, "<size>").content,
                                source, "<height>");

    std::size_t pos = 0;
    int index = 0;
    for (;;) {
        const TagSlice obj = tag_content(root.content, "object", pos, source);
        if (!obj.found) break;
        pos = obj.end;
        const std::string who = "object #" + std::to_string(index);

        const TagSlice name = tag_content(obj.content, "name", 0, source);
        if (!name.found)
            throw std::invalid_argument("voc: " + source + ": " + who + ": missing <name>");
        AnnoBox b;
        try {
            b.class_id = class_index(trim(name.content));
        } catch (const std::invalid_argument&) {
            throw std::invalid_argument("voc: " + source + ": " + who + ": unknown class '" +
                                        trim(name.content) + "'");
        }

        const TagSlice bnd = tag_content(obj.content, "bndbox", 0, source);
        if (!bnd.found)
            throw std::invalid_argument("voc: " + source + ": " + who + ": missing <bndbox>");
        auto coord = [&](const char* tag) {
            const TagSlice t = tag_content(bnd.content, tag, 0, source);
            if (!t.found)
                throw std::invalid_argument("voc: " + source + ": " + who + ": missing <" +
                                            std::string(tag) + ">");
            return static_cast<float>(
                parse_number(t.content, source, who + " <" + std::string(tag) + ">"));
        };
        b.x1 = coord("xmin");
        b.y1 = coord("ymin");
        b.x2 = coord("xmax");
        b.y2 = coord("ymax");

        if (!(b.x2 > b.x1) || !(b.y2 > b.y1))
            throw std::invalid_argument("voc: " + source + ": " + who + ": inverted box");

        const float w = static_cast<float>(res.anno.width);
        const float h = static_cast<float>(res.anno.height);
        const AnnoBox before = b;
        b.x1 = std::clamp(b.x1, 0.0f, w);
        b.x2 = std::clamp(b.x2, 0.0f, w);
        b.y1 = std::clamp(b.y1, 0.0f, h);
        b.y2 = std::clamp(b.y2, 0.0f, h);
        if (!(b.x2 > b.x1) || !(b.y2 > b.y1))
            throw std::invalid_argument("voc: " + source + ": " + who +
                                        ": box lies outside the image");
        if (b.x1 != before.x1 || b.x2 != before.x2 || b.y1 != before.y1 || b.y2 != before.y2)
            ++res.clamped;

        res.anno.boxes.push_back(b);
        ++index;
    }
    return res;
}

std::string write_voc(const ImageAnnotation& anno) {
    std::ostringstream os;
    os << "<annotation>\n";
    os << "  <filename>" << anno.id << ".ppm</filename>\n";
    os << "  <size>\n";
    os << "    <width>" << anno.width << "</width>\n";
    os << "    <height>" << anno.height << "</height>\n";
    os << "    <depth>3</depth>\n";
    os << "  </size>\n";
    for (const AnnoBox& b : anno.boxes) {
        os << "  <object>\n";
        os << "    <name>" << class_name(b.class_id) << "</name>\n";
        os << "    <bndbox>\n";
        os << "      <xmin>" << fmt_g9(b.x1) << "</xmin>\n";
        os << "      <ymin>" << fmt_g9(b.y1) << "</ymin>\n";
        os << "      <xmax>" << fmt_g9(b.x2) << "</xmax>\n";
        os << "      <ymax>" << fmt_g9(b.y2) << "</ymax>\n";
        os << "    </bndbox>\n";
        os << "  </object>\n";
    }
    os << "</annotation>\n";
    return os.str();
}

// ---- deterministic split -------------------------------------------------------

std::pair<std::vector<std::string>, std::vector<std::string>> split(std::vector<std::string> ids,
                                                                    const SplitSpec& spec) {
    if (ids.empty()) throw std::invalid_argument("split: empty id list");
    if (spec.train_fraction < 0.0 || spec.train_fraction > 1.0)
        throw std::invalid_argument("split: train fraction must lie in [0,1]");
    std::mt19937_64 rng(spec.seed);
    shuffle(ids, rng);
    const long long n = static_cast<long long>(ids.size());
    long long n_train = std::llround(spec.train_fraction * static_cast<double>(n));
    n_train = std::clamp(n_train, 0LL, n);
    std::vector<std::string> train(ids.begin(), ids.begin() + n_train);
    std::vector<std::string> val(ids.begin() + n_train, ids.end());
    return {std::move(train), std::move(val)};
}

// ---- image I/O (binary PPM) ----------------------------------------------------

namespace {

// next integer token, skipping whitespace and '#' comment lines
int ppm_int(std::istream& is, const std::string& path) {
    for (;;) {
        const int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            is.get();
        } else {
            break;
        }
    }
    int v = 0;
    if (!(is >> v)) throw std::invalid_argument("ppm: " + path + ": malformed header");
    return v;
}

void check_image(const Tensor& img, const char* who) {
    if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) < 1 || img.dim(2) < 1)
        throw std::invalid_argument(std::string(who) + ": expected a 3xHxW image, got " +
                                    img.shape_str());
}

}  // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("ppm: cannot open " + path);
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (!is || m0 != 'P' || m1 != '6')
        throw std::invalid_argument("ppm: " + path + ": not a binary P6 file");
    const int w = ppm_int(is, path);
    const int h = ppm_int(is, path);
    const int maxval = ppm_int(is, path);
    if (w < 1 || h < 1 || w > 65536 || h > 65536)
        throw std::invalid_argument("ppm: " + path + ": unreasonable dimensions");
    if (maxval != 255)
        throw std::invalid_argument("ppm: " + path + ": unsupported maxval " +
                                    std::to_string(maxval));
    is.get();  // single whitespace after the header

    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
    if (!is.read(reinterpret_cast<char*>(bytes.data()),
                 static_cast<std::streamsize>(bytes.size())))
        throw std::invalid_argument("ppm: " + path + ": truncated pixel data");

    Tensor img({3, h, w});
    std::size_t p = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<float>(bytes[p++]) / 255.0f;
    return img;
}

void write_ppm(const std::string& path, const Tensor& img) {
    check_image(img, "ppm");
    const int h = img.dim(1), w = img.dim(2);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("ppm: cannot open " + path + " for writing");
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
    std::size_t p = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(static_cast<double>(img.at(c, y, x)), 0.0, 1.0);
                bytes[p++] = static_cast<unsigned char>(std::llround(v * 255.0));
            }
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("ppm: write failed for " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("io: cannot open " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("io: cannot open " + path + " for writing");
    os << content;
    if (!os) throw std::runtime_error("io: write failed for " + path);
}

// ---- geometry ------------------------------------------------------------------

Tensor resize_nearest(const Tensor& img, int out_h, int out_w) {
    check_image(img, "resize");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize: target must be positive");
    const int h = img.dim(1), w = img.dim(2);
    Tensor out({3, out_h, out_w});
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(h - 1, static_cast<int>((y + 0.5) * h / out_h));
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(w - 1, static_cast<int>((x + 0.5) * w / out_w));
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = img.at(c, sy, sx);
        }
    }
    return out;
}

Box LetterboxMap::apply(const Box& b) const {
    Box r;
    r.cx = static_cast<float>(b.cx * scale + pad_x);
    r.cy = static_cast<float>(b.cy * scale + pad_y);
    r.w = static_cast<float>(b.w * scale);
    r.h = static_cast<float>(b.h * scale);
    return r;
}

Box LetterboxMap::invert(const Box& b) const {
    Box r;
    r.cx = static_cast<float>((b.cx - pad_x) / scale);
    r.cy = static_cast<float>((b.cy - pad_y) / scale);
    r.w = static_cast<float>(b.w / scale);
    r.h = static_cast<float>(b.h / scale);
    return r;
}

std::pair<Tensor, LetterboxMap> letterbox(const Tensor& img, int target) {
    check_image(img, "letterbox");
    if (target < 1) throw std::invalid_argument("letterbox: target must be positive");
    const int h = img.dim(1), w = img.dim(2);
    const double scale = std::min(static_cast<double>(target) / w,
                                  static_cast<double>(target) / h);
    const int new_w = std::clamp(static_cast<int>(std::llround(w * scale)), 1, target);
    const int new_h = std::clamp(static_cast<int>(std::llround(h * scale)), 1, target);
    const Tensor resized = resize_nearest(img, new_h, new_w);

    LetterboxMap map;
    map.scale = scale;
    map.pad_x = (target - new_w) / 2;
    map.pad_y = (target - new_h) / 2;
    map.target = target;
    map.src_w = w;
    map.src_h = h;

    Tensor canvas = Tensor::full({3, target, target}, 0.5f);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < new_h; ++y)
            for (int x = 0; x < new_w; ++x)
                canvas.at(c, y + map.pad_y, x + map.pad_x) = resized.at(c, y, x);
    return {std::move(canvas), map};
}

std::vector<AnnoBox> apply_letterbox(std::span<const AnnoBox> boxes, const LetterboxMap& map) {
    std::vector<AnnoBox> out;
    out.reserve(boxes.size());
    for (const AnnoBox& b : boxes) {
        AnnoBox r = b;
        r.x1 = static_cast<float>(b.x1 * map.scale + map.pad_x);
        r.x2 = static_cast<float>(b.x2 * map.scale + map.pad_x);
        r.y1 = static_cast<float>(b.y1 * map.scale + map.pad_y);
        r.y2 = static_cast<float>(b.y2 * map.scale + map.pad_y);
        out.push_back(r);
    }
    return out;
}

// ---- augmentation --------------------------------------------------------------

namespace {

constexpr double kMinKeptAreaFraction = 0.01;  // clipped boxes below 1% are dropped

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    check_image(a, who);
    check_image(b, who);
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(who) + ": image shapes differ (" + a.shape_str() +
                                    " vs " + b.shape_str() + ")");
}

}  // namespace

Augmented mosaic_at(std::span<const Tensor> images, std::span<const ImageAnnotation> annos,
                    int size, int cx, int cy) {
    if (images.size() != 4 || annos.size() != 4)
        throw std::invalid_argument("mosaic: expected exactly four sources");
    if (size < 2) throw std::invalid_argument("mosaic: output size must be >= 2");
    if (cx < 0 || cx > size || cy < 0 || cy > size)
        throw std::invalid_argument("mosaic: center outside the canvas");
    for (std::size_t i = 0; i < 4; ++i) {
        check_image(images[i], "mosaic");
        if (annos[i].width != images[i].dim(2) || annos[i].height != images[i].dim(1))
            throw std::invalid_argument("mosaic: source #" + std::to_string(i) +
                                        " annotation size disagrees with its image");
    }

    Augmented out;
    out.image = Tensor({3, size, size});
    const int qx[4] = {0, cx, 0, cx};
    const int qy[4] = {0, 0, cy, cy};
    const int qw[4] = {cx, size - cx, cx, size - cx};
    const int qh[4] = {cy, cy, size - cy, size - cy};

    for (int q = 0; q < 4; ++q) {
        if (qw[q] == 0 || qh[q] == 0) continue;
        const Tensor& src = images[static_cast<std::size_t>(q)];
        const int w = src.dim(2), h = src.dim(1);
        const double cover = std::max(static_cast<double>(qw[q]) / w,
                                      static_cast<double>(qh[q]) / h);
        const int sw = std::max(qw[q], static_cast<int>(std::llround(w * cover)));
        const int sh = std::max(qh[q], static_cast<int>(std::llround(h * cover)));
        const Tensor scaled = resize_nearest(src, sh, sw);
        const int ox = (sw - qw[q]) / 2;
        const int oy = (sh - qh[q]) / 2;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < qh[q]; ++y)
                for (int x = 0; x < qw[q]; ++x)
                    out.image.at(c, qy[q] + y, qx[q] + x) = scaled.at(c, oy + y, ox + x);

        const double sx = static_cast<double>(sw) / w;
        const double sy = static_cast<double>(sh) / h;
        for (const AnnoBox& b : annos[static_cast<std::size_t>(q)].boxes) {
            AnnoBox r = b;
            r.x1 = static_cast<float>(b.x1 * sx - ox + qx[q]);
            r.x2 = static_cast<float>(b.x2 * sx - ox + qx[q]);
            r.y1 = static_cast<float>(b.y1 * sy - oy + qy[q]);
            r.y2 = static_cast<float>(b.y2 * sy - oy + qy[q]);
            const double scaled_area = b.area() * sx * sy;
            r.x1 = std::clamp(r.x1, static_cast<float>(qx[q]), static_cast<float>(qx[q] + qw[q]));
            r.x2 = std::clamp(r.x2, static_cast<float>(qx[q]), static_cast<float>(qx[q] + qw[q]));
            r.y1 = std::clamp(r.y1, static_cast<float>(qy[q]), static_cast<float>(qy[q] + qh[q]));
            r.y2 = std::clamp(r.y2, static_cast<float>(qy[q]), static_cast<float>(qy[q] + qh[q]));
            if (!(r.x2 > r.x1) || !(r.y2 > r.y1)) continue;
            if (r.area() < kMinKeptAreaFraction * scaled_area) continue;
            out.boxes.push_back(r);
        }
    }
    return out;
}

Augmented mosaic(std::span<const Tensor> images, std::span<const ImageAnnotation> annos, int size,
                 std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double fx = uniform(rng, 0.25, 0.75);
    const double fy = uniform(rng, 0.25, 0.75);
    const int cx = std::clamp(static_cast<int>(std::llround(fx * size)), 1, size - 1);
    const int cy = std::clamp(static_cast<int>(std::llround(fy * size)), 1, size - 1);
    return mosaic_at(images, annos, size, cx, cy);
}

Tensor mixup(const Tensor& a, const Tensor& b, double lambda) {
    check_same_shape(a, b, "mixup");
    if (lambda < 0.0 || lambda > 1.0)
        throw std::invalid_argument("mixup: lambda must lie in [0,1]");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<float>(lambda * a[i] + (1.0 - lambda) * b[i]);
    return out;
}

std::vector<AnnoBox> mixup_boxes(std::span<const AnnoBox> a, std::span<const AnnoBox> b,
                                 double lambda) {
    if (lambda < 0.0 || lambda > 1.0)
        throw std::invalid_argument("mixup: lambda must lie in [0,1]");
    std::vector<AnnoBox> out;
    out.reserve(a.size() + b.size());
    for (AnnoBox box : a) {
        box.weight = static_cast<float>(box.weight * lambda);
        out.push_back(box);
    }
    for (AnnoBox box : b) {
        box.weight = static_cast<float>(box.weight * (1.0 - lambda));
        out.push_back(box);
    }
    return out;
}

Region random_region(int img_w, int img_h, std::mt19937_64& rng) {
    if (img_w < 1 || img_h < 1) throw std::invalid_argument("region: image must be non-empty");
    Region r;
    r.w = std::max(1, static_cast<int>(std::llround(uniform(rng, 0.2, 0.5) * img_w)));
    r.h = std::max(1, static_cast<int>(std::llround(uniform(rng, 0.2, 0.5) * img_h)));
    r.w = std::min(r.w, img_w);
    r.h = std::min(r.h, img_h);
    r.x = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(img_w - r.w + 1)));
    r.y = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(img_h - r.h + 1)));
    return r;
}

Augmented cutmix(const Tensor& a_img, std::span<const AnnoBox> a_boxes, const Tensor& b_img,
                 std::span<const AnnoBox> b_boxes, const Region& region) {
    check_same_shape(a_img, b_img, "cutmix");
    const int h = a_img.dim(1), w = a_img.dim(2);
    if (region.x < 0 || region.y < 0 || region.w < 0 || region.h < 0 ||
        region.x + region.w > w || region.y + region.h > h)
        throw std::invalid_argument("cutmix: region outside the image");

    Augmented out;
    out.image = a_img;
    out.boxes.assign(a_boxes.begin(), a_boxes.end());
    if (region.w == 0 || region.h == 0) return out;

    for (int c = 0; c < 3; ++c)
        for (int y = region.y; y < region.y + region.h; ++y)
            for (int x = region.x; x < region.x + region.w; ++x)
                out.image.at(c, y, x) = b_img.at(c, y, x);

    const double rx1 = region.x, ry1 = region.y;
    const double rx2 = region.x + region.w, ry2 = region.y + region.h;
    out.boxes.clear();
    for (const AnnoBox& b : a_boxes) {
        // survive unless the pasted region hides all but <1% of the box
        const double ow = std::max(0.0, std::min<double>(b.x2, rx2) - std::max<double>(b.x1, rx1));
        const double oh = std::max(0.0, std::min<double>(b.y2, ry2) - std::max<double>(b.y1, ry1));
        const double visible = b.area() - ow * oh;
        if (visible >= kMinKeptAreaFraction * b.area()) out.boxes.push_back(b);
    }
    for (const AnnoBox& b : b_boxes) {
        AnnoBox r = b;
        r.x1 = std::clamp(r.x1, static_cast<float>(rx1), static_cast<float>(rx2));
        r.x2 = std::clamp(r.x2, static_cast<float>(rx1), static_cast<float>(rx2));
        r.y1 = std::clamp(r.y1, static_cast<float>(ry1), static_cast<float>(ry2));
        r.y2 = std::clamp(r.y2, static_cast<float>(ry1), static_cast<float>(ry2));
        if (!(r.x2 > r.x1) || !(r.y2 > r.y1)) continue;
        if (r.area() < kMinKeptAreaFraction * b.area()) continue;
        out.boxes.push_back(r);
    }
    return out;
}

Tensor adjust_brightness(const Tensor& img, double factor) {
    check_image(img, "brightness");
    if (!(factor >= 0.0) || !std::isfinite(factor))
        throw std::invalid_argument("brightness: factor must be finite and >= 0");
    Tensor out(img.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<float>(std::clamp(img[i] * factor, 0.0, 1.0));
    return out;
}

Tensor to_grayscale(const Tensor& img) {
    check_image(img, "grayscale");
    const int h = img.dim(1), w = img.dim(2);
    Tensor out(img.shape());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double luma = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) +
                                0.114 * img.at(2, y, x);
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = static_cast<float>(luma);
        }
    return out;
}

// ---- synthetic dataset ---------------------------------------------------------

namespace {

int draw_dim(std::mt19937_64& rng, int lo, int hi) {
    return lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

// value noise decoupled from the object RNG so the draw order stays stable
double pixel_noise(std::uint64_t image_key, int y, int x) {
    const std::uint64_t h = mix64(image_key ^ (static_cast<std::uint64_t>(y) << 24) ^
                                  static_cast<std::uint64_t>(x));
    return (static_cast<double>(h >> 11) * 0x1.0p-53 - 0.5) * 0.06;
}

}  // namespace

std::vector<SynthSample> synth_generate(int n, std::uint64_t seed, int width, int height) {
    if (n < 1) throw std::invalid_argument("synth: need at least one image");
    if (width < 32 || height < 32)
        throw std::invalid_argument("synth: images must be at least 32x32");

    std::vector<SynthSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const std::uint64_t key = mix64(seed + static_cast<std::uint64_t>(i));
        std::mt19937_64 rng(key);

        SynthSample s;
        char buf[32];
        std::snprintf(buf, sizeof buf, "synth_%06d", i);
        s.anno.id = buf;
        s.anno.width = width;
        s.anno.height = height;
        s.image = Tensor({3, height, width});

        double base[3], slope_x[3], slope_y[3];
        for (int c = 0; c < 3; ++c) {
            base[c] = uniform(rng, 0.35, 0.65);
            slope_x[c] = uniform(rng, -0.15, 0.15);
            slope_y[c] = uniform(rng, -0.15, 0.15);
        }
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const double noise = pixel_noise(key, y, x);
                for (int c = 0; c < 3; ++c) {
                    const double v = base[c] + slope_x[c] * x / (width - 1) +
                                     slope_y[c] * y / (height - 1) + noise;
                    s.image.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }

        const int count = 1 + static_cast<int>(uniform_index(rng, 4));
        for (int k = 0; k < count; ++k) {
            const int cls = static_cast<int>(uniform_index(rng, 8));
            int bw = 0, bh = 0;
            switch (cls) {
                case 0:  // D00: long vertical crack
                case 1:  // D01: dashed vertical crack
                    bw = draw_dim(rng, 6, 16);
                    bh = draw_dim(rng, 60, 160);
                    break;
                case 2:  // D10: long horizontal crack
                case 3:  // D11: dashed horizontal crack
                    bw = draw_dim(rng, 60, 160);
                    bh = draw_dim(rng, 6, 16);
                    break;
                case 4:  // D20: alligator patch
                    bw = draw_dim(rng, 50, 110);
                    bh = draw_dim(rng, 50, 110);
                    break;
                case 5:  // D40: dark pothole
                    bw = draw_dim(rng, 24, 64);
                    bh = draw_dim(rng, 24, 64);
                    break;
                case 6:  // D43: faded line segment
                    bw = draw_dim(rng, 30, 80);
                    bh = draw_dim(rng, 12, 30);
                    break;
                default:  // D44: faded crossing stripes
                    bw = draw_dim(rng, 40, 90);
                    bh = draw_dim(rng, 40, 90);
                    break;
            }
            bw = std::min(bw, width - 4);
            bh = std::min(bh, height - 4);
            const int x0 = 2 + static_cast<int>(uniform_index(
                                   rng, static_cast<std::uint64_t>(width - 4 - bw + 1)));
            const int y0 = 2 + static_cast<int>(uniform_index(
                                   rng, static_cast<std::uint64_t>(height - 4 - bh + 1)));
            const double jitter = uniform(rng, -0.04, 0.04);

            for (int y = y0; y < y0 + bh; ++y)
                for (int x = x0; x < x0 + bw; ++x) {
                    double v;
                    switch (cls) {
                        case 0: v = 0.12; break;
                        case 1: v = ((y - y0) / 8) % 2 == 0 ? 0.12 : -1.0; break;
                        case 2: v = 0.12; break;
                        case 3: v = ((x - x0) / 8) % 2 == 0 ? 0.12 : -1.0; break;
                        case 4: v = (x + y) % 4 == 0 ? 0.30 : 0.18; break;
                        case 5: v = 0.06; break;
                        case 6: v = 0.88; break;
                        default: v = ((x - x0) / 8) % 2 == 0 ? 0.90 : 0.25; break;
                    }
                    if (v < 0.0) continue;  // dash gap keeps the background
                    const double tone = std::clamp(v + jitter, 0.0, 1.0);
                    for (int c = 0; c < 3; ++c) s.image.at(c, y, x) = static_cast<float>(tone);
                }

            AnnoBox b;
            b.x1 = static_cast<float>(x0);
            b.y1 = static_cast<float>(y0);
            b.x2 = static_cast<float>(x0 + bw);
            b.y2 = static_cast<float>(y0 + bh);
            b.class_id = cls;
            s.anno.boxes.push_back(b);
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---- dataset bookkeeping -------------------------------------------------------

void validate_dataset_counts(long images, long boxes) {
    if (images != kReferenceImageCount)
        throw std::invalid_argument("dataset: expected " + std::to_string(kReferenceImageCount) +
                                    " images, found " + std::to_string(images));
    if (boxes != kReferenceBoxCount)
        throw std::invalid_argument("dataset: expected " + std::to_string(kReferenceBoxCount) +
                                    " boxes, found " + std::to_string(boxes));
}

}  // namespace dsnet
