#include "dsnet/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "dsnet/dataio.hpp"
#include "dsnet/log.hpp"
#include "dsnet/metrics.hpp"
#include "dsnet/selftest.hpp"
#include "dsnet/textfmt.hpp"

namespace fs = std::filesystem;

namespace dsnet {

// ---- config parsing ---------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& where, const std::string& key,
                            const std::string& value, const std::string& want) {
    throw std::invalid_argument("config: " + where + ": " + key + " = '" + value + "' (" + want +
                                ")");
}

double parse_double(const std::string& where, const std::string& key, const std::string& value) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || ptr != value.data() + value.size() || !std::isfinite(v))
        bad_value(where, key, value, "expected a number");
    return v;
}

long long parse_integer(const std::string& where, const std::string& key,
                        const std::string& value) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || ptr != value.data() + value.size())
        bad_value(where, key, value, "expected an integer");
    return v;
}

bool parse_bool(const std::string& where, const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    bad_value(where, key, value, "expected true/false");
}

std::vector<float> parse_float_list(const std::string& where, const std::string& key,
                                    const std::string& value) {
    std::vector<float> out;
    std::string token;
    std::istringstream is(value);
    while (std::getline(is, token, ',')) {
        token = trim(token);
        if (token.empty()) continue;
        out.push_back(static_cast<float>(parse_double(where, key, token)));
    }
    if (out.empty()) bad_value(where, key, value, "expected comma-separated numbers");
    return out;
}

Act parse_act_name(const std::string& where, const std::string& value) {
    if (value == "silu") return Act::SiLU;
    if (value == "relu") return Act::ReLU;
    if (value == "leaky_relu") return Act::LeakyReLU;
    if (value == "mish") return Act::Mish;
    if (value == "gelu") return Act::GeLU;
    if (value == "sigmoid") return Act::Sigmoid;
    if (value == "identity") return Act::Identity;
    throw std::invalid_argument("config: " + where + ": unknown activation '" + value + "'");
}

}  // namespace

void apply_config_value(RunConfig& rc, const std::string& key, const std::string& value,
                        const std::string& where) {
    if (key == "weights") {
        rc.weights = value;
    } else if (key == "random_weights") {
        rc.random_weights = parse_bool(where, key, value);
    } else if (key == "seed") {
        const long long v = parse_integer(where, key, value);
        if (v < 0) bad_value(where, key, value, "seed must be >= 0");
        rc.seed = static_cast<std::uint64_t>(v);
    } else if (key == "out_dir") {
        if (value.empty()) bad_value(where, key, value, "expected a directory path");
        rc.out_dir = value;
    } else if (key == "score_thresh") {
        rc.score_thresh = parse_double(where, key, value);
    } else if (key == "nms_thresh") {
        rc.nms_thresh = parse_double(where, key, value);
    } else if (key == "render") {
        rc.render = parse_bool(where, key, value);
    } else if (key == "input_size") {
        rc.input_size = static_cast<int>(parse_integer(where, key, value));
    } else if (key == "num_classes") {
        rc.num_classes = static_cast<int>(parse_integer(where, key, value));
    } else if (key == "small_object_head") {
        rc.small_object_head = parse_bool(where, key, value);
    } else if (key == "act") {
        parse_act_name(where, value);  // reject bad names early
        rc.act = value;
    } else if (key == "scale_qk") {
        rc.scale_qk = parse_bool(where, key, value);
    } else if (key == "window") {
        rc.window = static_cast<int>(parse_integer(where, key, value));
    } else if (key == "heads") {
        rc.heads = static_cast<int>(parse_integer(where, key, value));
    } else if (key == "anchors") {
        rc.anchors = parse_float_list(where, key, value);
    } else if (key == "mode") {
        rc.mode = value;
    } else if (key == "brightness") {
        rc.brightness = parse_double(where, key, value);
    } else if (key == "mixup_lambda") {
        rc.mixup_lambda = parse_double(where, key, value);
    } else {
        throw std::invalid_argument("config: " + where + ": unknown key '" + key + "'");
    }
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    RunConfig rc;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: " + where + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw std::invalid_argument("config: " + where + ": empty key");
        apply_config_value(rc, key, value, where);
    }
    return rc;
}

DetectorConfig to_detector_config(const RunConfig& rc) {
    DetectorConfig dc;
    dc.input_size = rc.input_size;
    dc.num_classes = rc.num_classes;
    dc.small_object_head = rc.small_object_head;
    dc.act = parse_act_name("act", rc.act);
    dc.scale_qk = rc.scale_qk;
    dc.window = rc.window;
    dc.heads = rc.heads;
    if (!rc.anchors.empty()) {
        const std::size_t need = 4u * static_cast<std::size_t>(dc.anchors_per_scale) * 2u;
        if (rc.anchors.size() != need)
            throw std::invalid_argument("config: anchors needs exactly " + std::to_string(need) +
                                        " numbers (w,h per anchor, four strides), got " +
                                        std::to_string(rc.anchors.size()));
        dc.anchors.assign(4, {});
        std::size_t p = 0;
        for (auto& per_scale : dc.anchors) {
            per_scale.resize(static_cast<std::size_t>(dc.anchors_per_scale));
            for (auto& a : per_scale) {
                a.w = rc.anchors[p++];
                a.h = rc.anchors[p++];
            }
        }
    }
    dc.validate();
    return dc;
}

// ---- profile ------------------------------------------------------------------

int cmd_profile(const RunConfig& rc) {
    const Detector det(to_detector_config(rc));
    const auto rows = det.layer_table();

    std::size_t name_w = 5, shape_w = 6;
    for (const auto& r : rows) {
        name_w = std::max(name_w, r.name.size());
        shape_w = std::max(shape_w, r.out_shape.size());
    }

    std::ostream& os = std::cout;
    os << std::left << std::setw(static_cast<int>(name_w)) << "layer" << "  "
       << std::setw(static_cast<int>(shape_w)) << "output" << "  " << std::right
       << std::setw(10) << "params" << "  " << std::setw(14) << "macs" << "\n";
    long total_params = 0;
    long long total_macs = 0;
    for (const auto& r : rows) {
        os << std::left << std::setw(static_cast<int>(name_w)) << r.name << "  "
           << std::setw(static_cast<int>(shape_w)) << r.out_shape << "  " << std::right
           << std::setw(10) << r.params << "  " << std::setw(14) << r.macs;
        if (r.msa != 0 || r.wmsa != 0) {
            os << "  attention: global=" << r.msa << " windowed=" << r.wmsa
               << " ratio=" << fmt_fixed(static_cast<double>(r.msa) / static_cast<double>(r.wmsa), 2);
        }
        os << "\n";
        total_params += r.params;
        total_macs += r.macs;
    }
    os << "\n";
    os << "total_parameters = " << det.parameter_count() << "\n";
    os << "total_mac_estimate = " << total_macs << "\n";
    if (det.parameter_count() != total_params)
        throw std::logic_error("profile: table rows disagree with the parameter registry");
    return 0;
}

// ---- rendering ------------------------------------------------------------------

namespace {

// 5x7 bitmap glyphs for the characters class names use (capital D + digits)
const unsigned char* glyph_rows(char c) {
    static const unsigned char kD[7] = {0x1e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1e};
    static const unsigned char kDigits[10][7] = {
        {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e},  // 0
        {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e},  // 1
        {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f},  // 2
        {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e},  // 3
        {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02},  // 4
        {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e},  // 5
        {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e},  // 6
        {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
        {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e},  // 8
        {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c},  // 9
    };
    if (c == 'D') return kD;
    if (c >= '0' && c <= '9') return kDigits[c - '0'];
    return nullptr;
}

struct Rgb {
    float r, g, b;
};

Rgb class_color(int class_id) {
    static const Rgb kPalette[8] = {{0.90f, 0.10f, 0.10f}, {0.10f, 0.60f, 0.90f},
                                    {0.95f, 0.75f, 0.10f}, {0.20f, 0.80f, 0.20f},
                                    {0.80f, 0.20f, 0.80f}, {1.00f, 0.50f, 0.00f},
                                    {0.10f, 0.90f, 0.80f}, {0.90f, 0.30f, 0.60f}};
    return kPalette[((class_id % 8) + 8) % 8];
}

void put_pixel(Tensor& img, int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= img.dim(2) || y >= img.dim(1)) return;
    img.at(0, y, x) = c.r;
    img.at(1, y, x) = c.g;
    img.at(2, y, x) = c.b;
}

void draw_rect(Tensor& img, int x1, int y1, int x2, int y2, const Rgb& c) {
    for (int t = 0; t < 2; ++t) {  // 2-pixel border
        for (int x = x1; x <= x2; ++x) {
            put_pixel(img, x, y1 + t, c);
            put_pixel(img, x, y2 - t, c);
        }
        for (int y = y1; y <= y2; ++y) {
            put_pixel(img, x1 + t, y, c);
            put_pixel(img, x2 - t, y, c);
        }
    }
}

void draw_text(Tensor& img, int x, int y, const std::string& text, const Rgb& c) {
    int cx = x;
    for (char ch : text) {
        const unsigned char* rows = glyph_rows(ch);
        if (rows != nullptr)
            for (int ry = 0; ry < 7; ++ry)
                for (int rx = 0; rx < 5; ++rx)
                    if (rows[ry] & (1 << (4 - rx))) put_pixel(img, cx + rx, y + ry, c);
        cx += 6;
    }
}

std::string label_for(int class_id, int num_classes) {
    if (num_classes == static_cast<int>(class_names().size())) return class_name(class_id);
    return "c" + std::to_string(class_id);
}

void render_detections(Tensor& img, std::span<const Detection> dets, int num_classes) {
    for (const Detection& d : dets) {
        const Rgb color = class_color(d.class_id);
        const int x1 = static_cast<int>(std::lround(d.box.x1()));
        const int y1 = static_cast<int>(std::lround(d.box.y1()));
        const int x2 = static_cast<int>(std::lround(d.box.x2()));
        const int y2 = static_cast<int>(std::lround(d.box.y2()));
        draw_rect(img, x1, y1, x2, y2, color);
        const int ty = y1 >= 9 ? y1 - 9 : y1 + 2;
        draw_text(img, x1 + 2, ty, label_for(d.class_id, num_classes), color);
    }
}

struct InputImage {
    std::string id;
    std::string path;
};

std::vector<InputImage> collect_inputs(const std::vector<std::string>& paths, const char* verb) {
    if (paths.empty()) throw std::invalid_argument(std::string(verb) + ": no input images");
    std::vector<InputImage> items;
    items.reserve(paths.size());
    for (const std::string& p : paths) {
        InputImage item;
        item.id = fs::path(p).stem().string();
        item.path = p;
        if (item.id.empty())
            throw std::invalid_argument(std::string(verb) + ": cannot derive an id from '" + p +
                                        "'");
        items.push_back(std::move(item));
    }
    std::sort(items.begin(), items.end(),
              [](const InputImage& a, const InputImage& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < items.size(); ++i)
        if (items[i].id == items[i - 1].id)
            throw std::invalid_argument(std::string(verb) + ": duplicate image id '" +
                                        items[i].id + "'");
    return items;
}

}  // namespace

// ---- detect --------------------------------------------------------------------

int cmd_detect(const RunConfig& rc, const std::vector<std::string>& images) {
    const auto items = collect_inputs(images, "detect");
    Detector det(to_detector_config(rc));
    if (rc.random_weights) {
        det.random_init(rc.seed);
        log_info("detect: random weights, seed " + std::to_string(rc.seed));
    } else if (!rc.weights.empty()) {
        det.load_weights(rc.weights);
        log_info("detect: loaded weights from " + rc.weights);
    } else {
        throw std::invalid_argument("detect: provide --weights FILE or --random-weights");
    }

    fs::create_directories(rc.out_dir);
    std::vector<DetectionRecord> records;
    for (const InputImage& item : items) {
        Tensor img = read_ppm(item.path);
        auto [canvas, map] = letterbox(img, rc.input_size);
        const auto outputs = det.forward(canvas);
        auto dets = det.decode(outputs, rc.score_thresh);
        dets = nms(std::move(dets), rc.nms_thresh);
        for (Detection& d : dets) d.box = map.invert(d.box);
        log_info("detect: " + item.id + ": " + std::to_string(dets.size()) + " detections");
        if (rc.render) {
            Tensor annotated = img;
            render_detections(annotated, dets, rc.num_classes);
            write_ppm((fs::path(rc.out_dir) / (item.id + ".det.ppm")).string(), annotated);
        }
        for (const Detection& d : dets) records.push_back({item.id, d});
    }
    const std::string out_path = (fs::path(rc.out_dir) / "detections.tsv").string();
    save_detections(out_path, records);
    log_info("detect: wrote " + std::to_string(records.size()) + " records to " + out_path);
    return 0;
}

// ---- eval ----------------------------------------------------------------------

int cmd_eval(const RunConfig& rc, const std::string& gt_dir, const std::string& dets_path) {
    if (!fs::is_directory(gt_dir))
        throw std::invalid_argument("eval: '" + gt_dir + "' is not a directory");
    std::vector<std::string> xml_paths;
    for (const auto& entry : fs::directory_iterator(gt_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".xml")
            xml_paths.push_back(entry.path().string());
    std::sort(xml_paths.begin(), xml_paths.end());
    if (xml_paths.empty())
        throw std::invalid_argument("eval: no .xml annotations in " + gt_dir);

    std::map<std::string, ImageAnnotation> gt;
    int clamped = 0;
    for (const std::string& p : xml_paths) {
        VocParseResult res = parse_voc(read_text_file(p), p);
        clamped += res.clamped;
        if (!gt.emplace(res.anno.id, std::move(res.anno)).second)
            throw std::invalid_argument("eval: duplicate annotation id in " + p);
    }
    if (clamped > 0)
        log_info("eval: clamped " + std::to_string(clamped) + " out-of-bounds boxes");

    const auto records = load_detections(dets_path);
    std::set<std::string> unknown;
    for (const auto& r : records)
        if (!gt.count(r.image_id)) unknown.insert(r.image_id);
    if (!unknown.empty()) {
        std::string msg = "eval: detections reference unknown image ids:";
        for (const auto& id : unknown) msg += " " + id;
        throw std::invalid_argument(msg);
    }

    Dataset data;
    data.reserve(gt.size());
    for (const auto& [id, anno] : gt) {
        ImageSample sample;
        for (const AnnoBox& b : anno.boxes)
            sample.gts.push_back({to_center_box(b), b.class_id});
        for (const auto& r : records)
            if (r.image_id == id) sample.dets.push_back(r.det);
        data.push_back(std::move(sample));
    }

    const MetricsReport rep = evaluate(data, rc.num_classes, 0.5, rc.score_thresh);

    std::vector<std::string> names;
    for (int k = 0; k < rc.num_classes; ++k) names.push_back(label_for(k, rc.num_classes));

    fs::create_directories(rc.out_dir);
    {
        std::ofstream os(fs::path(rc.out_dir) / "report.txt");
        write_report(os, rep, names);
    }
    {
        std::ofstream os(fs::path(rc.out_dir) / "report.kv");
        write_report_kv(os, rep);
    }
    for (const ClassMetrics& cm : rep.per_class) {
        std::ofstream os(fs::path(rc.out_dir) /
                         ("pr_" + label_for(cm.class_id, rc.num_classes) + ".csv"));
        write_pr_csv(os, cm.curve);
    }
    write_report(std::cout, rep, names);
    log_info("eval: wrote report.txt, report.kv and " + std::to_string(rep.per_class.size()) +
             " curve files to " + rc.out_dir);
    return 0;
}

// ---- augment -------------------------------------------------------------------

namespace {

struct AugmentItem {
    std::string id;
    Tensor image;
    ImageAnnotation anno;
};

AugmentItem load_augment_item(const InputImage& input) {
    AugmentItem item;
    item.id = input.id;
    item.image = read_ppm(input.path);
    const fs::path xml = fs::path(input.path).replace_extension(".xml");
    if (fs::exists(xml)) {
        VocParseResult res = parse_voc(read_text_file(xml.string()), xml.string());
        item.anno = std::move(res.anno);
        if (item.anno.width != item.image.dim(2) || item.anno.height != item.image.dim(1))
            throw std::invalid_argument("augment: " + xml.string() +
                                        " size disagrees with the image");
    } else {
        item.anno.width = item.image.dim(2);
        item.anno.height = item.image.dim(1);
    }
    item.anno.id = input.id;
    return item;
}

void write_augmented(const std::string& out_dir, const std::string& stem, const Tensor& image,
                     std::vector<AnnoBox> boxes) {
    ImageAnnotation anno;
    anno.id = stem;
    anno.width = image.dim(2);
    anno.height = image.dim(1);
    anno.boxes = std::move(boxes);
    write_ppm((fs::path(out_dir) / (stem + ".ppm")).string(), image);
    write_text_file((fs::path(out_dir) / (stem + ".xml")).string(), write_voc(anno));
}

}  // namespace

int cmd_augment(const RunConfig& rc, const std::vector<std::string>& images) {
    const auto inputs = collect_inputs(images, "augment");
    fs::create_directories(rc.out_dir);

    const std::string& mode = rc.mode;
    const bool per_image = mode == "none" || mode == "brightness" || mode == "grayscale" ||
                           mode == "letterbox";
    const bool pairwise = mode == "mixup" || mode == "cutmix";
    if (!per_image && !pairwise && mode != "mosaic")
        throw std::invalid_argument("augment: unknown mode '" + mode + "'");

    if (per_image) {
        for (const InputImage& input : inputs) {
            AugmentItem item = load_augment_item(input);
            const std::string stem = item.id + "_" + mode;
            if (mode == "none") {
                write_augmented(rc.out_dir, stem, item.image, item.anno.boxes);
            } else if (mode == "brightness") {
                write_augmented(rc.out_dir, stem, adjust_brightness(item.image, rc.brightness),
                                item.anno.boxes);
            } else if (mode == "grayscale") {
                write_augmented(rc.out_dir, stem, to_grayscale(item.image), item.anno.boxes);
            } else {
                auto [canvas, map] = letterbox(item.image, rc.input_size);
                write_augmented(rc.out_dir, stem, canvas, apply_letterbox(item.anno.boxes, map));
            }
            log_info("augment: wrote " + stem + ".ppm");
        }
        return 0;
    }

    if (mode == "mosaic") {
        if (inputs.size() < 4)
            throw std::invalid_argument("augment: mosaic needs at least four images");
        std::vector<Tensor> imgs;
        std::vector<ImageAnnotation> annos;
        for (std::size_t i = 0; i < 4; ++i) {
            AugmentItem item = load_augment_item(inputs[i]);
            imgs.push_back(std::move(item.image));
            annos.push_back(std::move(item.anno));
        }
        Augmented a = mosaic(imgs, annos, rc.input_size, rc.seed);
        const std::string stem = inputs[0].id + "_mosaic";
        write_augmented(rc.out_dir, stem, a.image, std::move(a.boxes));
        log_info("augment: wrote " + stem + ".ppm");
        return 0;
    }

    // mixup / cutmix consume the first two images
    if (inputs.size() < 2)
        throw std::invalid_argument("augment: " + mode + " needs at least two images");
    AugmentItem a = load_augment_item(inputs[0]);
    AugmentItem b = load_augment_item(inputs[1]);
    const std::string stem = a.id + "_" + mode;
    if (mode == "mixup") {
        Tensor blended = mixup(a.image, b.image, rc.mixup_lambda);
        write_augmented(rc.out_dir, stem, blended,
                        mixup_boxes(a.anno.boxes, b.anno.boxes, rc.mixup_lambda));
    } else {
        std::mt19937_64 rng(rc.seed);
        const Region region = random_region(a.image.dim(2), a.image.dim(1), rng);
        Augmented mixed = cutmix(a.image, a.anno.boxes, b.image, b.anno.boxes, region);
        write_augmented(rc.out_dir, stem, mixed.image, std::move(mixed.boxes));
    }
    log_info("augment: wrote " + stem + ".ppm");
    return 0;
}

// ---- selftest ------------------------------------------------------------------

int cmd_selftest(const RunConfig& rc) {
    (void)rc;
    return run_selftest(std::cout) == 0 ? 0 : 1;
}

// ---- argument parsing ----------------------------------------------------------

namespace {

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"Road-damage detector: profile, detect, evaluate, augment, self-test"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;
    std::vector<std::string> detect_images, augment_images;
    std::string gt_dir, dets_path;

    auto add_shared = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key = value configuration file");
        auto opt = [&, sub](const std::string& flag, const std::string& key,
                            const std::string& help) {
            sub->add_option_function<std::string>(
                flag, [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); },
                help);
        };
        opt("--seed", "seed", "RNG seed");
        opt("--out-dir", "out_dir", "output directory");
        opt("--score-thresh", "score_thresh", "detection score threshold");
        opt("--nms-thresh", "nms_thresh", "NMS IoU threshold");
        opt("--weights", "weights", "weight file");
        opt("--input-size", "input_size", "network input size");
        opt("--num-classes", "num_classes", "number of classes");
        opt("--act", "act", "activation (silu/relu/leaky_relu/mish/gelu/sigmoid/identity)");
        opt("--window", "window", "attention window size");
        opt("--heads", "heads", "attention head count");
        opt("--small-object-head", "small_object_head", "enable the stride-4 head (true/false)");
        sub->add_flag_callback(
            "--random-weights",
            [&overrides] { overrides.emplace_back("random_weights", "true"); },
            "seeded random init instead of a weight file");
        return sub;
    };

    add_shared(app.add_subcommand("profile", "print the per-layer cost table"));
    CLI::App* detect = add_shared(app.add_subcommand("detect", "run detection on PPM images"));
    detect->add_option("images", detect_images, "input images (PPM)")->required();
    detect->add_flag_callback(
        "--render", [&overrides] { overrides.emplace_back("render", "true"); },
        "also write annotated PPM copies");
    CLI::App* evalc = add_shared(
        app.add_subcommand("eval", "score a detections file against XML ground truth"));
    evalc->add_option("gt_dir", gt_dir, "directory of VOC-style XML annotations")->required();
    evalc->add_option("detections", dets_path, "detections .tsv file")->required();
    CLI::App* augment = add_shared(app.add_subcommand("augment", "write augmented previews"));
    augment->add_option("images", augment_images, "input images (PPM)")->required();
    augment->add_option_function<std::string>(
        "--mode",
        [&overrides](const std::string& v) { overrides.emplace_back("mode", v); },
        "none/brightness/grayscale/letterbox/mosaic/mixup/cutmix");
    augment->add_option_function<std::string>(
        "--brightness",
        [&overrides](const std::string& v) { overrides.emplace_back("brightness", v); },
        "brightness factor");
    augment->add_option_function<std::string>(
        "--mixup-lambda",
        [&overrides](const std::string& v) { overrides.emplace_back("mixup_lambda", v); },
        "mixup blend weight");
    add_shared(app.add_subcommand("selftest", "run the in-process invariant suites"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    RunConfig rc;
    if (!config_path.empty()) rc = load_config_file(config_path);
    for (const auto& [key, value] : overrides) apply_config_value(rc, key, value, "--" + key);

    if (app.got_subcommand("profile")) return cmd_profile(rc);
    if (app.got_subcommand("detect")) return cmd_detect(rc, detect_images);
    if (app.got_subcommand("eval")) return cmd_eval(rc, gt_dir, dets_path);
    if (app.got_subcommand("augment")) return cmd_augment(rc, augment_images);
    return cmd_selftest(rc);
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    try {
        return dispatch(argc, argv);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::logic_error& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace dsnet
