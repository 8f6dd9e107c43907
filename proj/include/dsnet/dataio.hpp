#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsnet/box.hpp"
#include "dsnet/tensor.hpp"

namespace dsnet {

// ---- class taxonomy ---------------------------------------------------------

// The eight damage classes, in index order. The mapping is a bijection;
// unknown identifiers are rejected.
std::span<const std::string> class_names();
int class_index(const std::string& name);   // throws on unknown name
const std::string& class_name(int index);   // throws on out-of-range index

// ---- annotations --------------------------------------------------------------

// One labeled box in corner coordinates (pixels, origin top-left). `weight`
// is the mixing weight recorded by mixup; every other producer leaves it 1
// and the loss ignores it.
struct AnnoBox {
    float x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    int class_id = 0;
    float weight = 1.0f;

    float width() const { return x2 - x1; }
    float height() const { return y2 - y1; }
    double area() const { return static_cast<double>(width()) * height(); }
};

struct ImageAnnotation {
    std::string id;  // image identifier (filename stem)
    int width = 0, height = 0;
    std::vector<AnnoBox> boxes;
};

// center-format conversions for handing boxes to the model and the metrics
Box to_center_box(const AnnoBox& a);
AnnoBox from_center_box(const Box& b, int class_id);

// ---- VOC-style XML ------------------------------------------------------------

// Reader/writer for the documented element subset: annotation/filename,
// size/{width,height}, object/name, object/bndbox/{xmin,ymin,xmax,ymax}.
// Boxes that stick out of the image are clamped back in and counted;
// inverted or fully-outside boxes are rejected naming the object index.
struct VocParseResult {
    ImageAnnotation anno;
    int clamped = 0;  // boxes whose coordinates had to be pulled into bounds
};

VocParseResult parse_voc(const std::string& xml, const std::string& source = "<memory>");
std::string write_voc(const ImageAnnotation& anno);

// ---- deterministic split -------------------------------------------------------

struct SplitSpec {
    std::uint64_t seed = 1;
    double train_fraction = 0.8;
};

// Seeded shuffle, first round(fraction * n) ids go to train. The two halves
// always partition the input exactly.
std::pair<std::vector<std::string>, std::vector<std::string>> split(
    std::vector<std::string> ids, const SplitSpec& spec);

// ---- image I/O (binary PPM) ----------------------------------------------------

// (3,H,W) float images in [0,1] <-> 8-bit binary PPM (P6, maxval 255).
// Byte -> float -> byte roundtrips exactly.
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& img);

// small text-file helpers shared by the tools
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// ---- geometry ------------------------------------------------------------------

Tensor resize_nearest(const Tensor& img, int out_h, int out_w);

// Aspect-preserving resize plus symmetric 0.5-gray padding to a square
// target. The map carries the forward transform (dst = src*scale + pad) and
// its exact inverse for carrying detections back to source coordinates.
struct LetterboxMap {
    double scale = 1.0;
    int pad_x = 0, pad_y = 0;
    int target = 0;
    int src_w = 0, src_h = 0;

    Box apply(const Box& b) const;
    Box invert(const Box& b) const;
};

std::pair<Tensor, LetterboxMap> letterbox(const Tensor& img, int target);
std::vector<AnnoBox> apply_letterbox(std::span<const AnnoBox> boxes, const LetterboxMap& map);

// ---- augmentation --------------------------------------------------------------

struct Augmented {
    Tensor image;
    std::vector<AnnoBox> boxes;
};

// Four sources scaled (cover), center-cropped into the quadrants around
// (cx, cy), boxes remapped and clipped; a clipped box is dropped when its
// area falls below 1% of its scaled original. cx/cy in [0, size]; a center
// on the border degenerates to fewer sources.
Augmented mosaic_at(std::span<const Tensor> images, std::span<const ImageAnnotation> annos,
                    int size, int cx, int cy);

// Seeded wrapper: draws the center uniformly from the middle half of the
// canvas ([0.25, 0.75] of each axis).
Augmented mosaic(std::span<const Tensor> images, std::span<const ImageAnnotation> annos,
                 int size, std::uint64_t seed);

// lambda*a + (1-lambda)*b; the box union keeps a's boxes at weight lambda and
// b's at 1-lambda
Tensor mixup(const Tensor& a, const Tensor& b, double lambda);
std::vector<AnnoBox> mixup_boxes(std::span<const AnnoBox> a, std::span<const AnnoBox> b,
                                 double lambda);

struct Region {
    int x = 0, y = 0, w = 0, h = 0;
};

Region random_region(int img_w, int img_h, std::mt19937_64& rng);

// Rectangular region of b pasted into a. b's boxes are clipped to the region
// (same 1% drop rule); a's boxes are dropped when the region occludes all but
// <1% of them. An empty region returns a unchanged.
Augmented cutmix(const Tensor& a_img, std::span<const AnnoBox> a_boxes, const Tensor& b_img,
                 std::span<const AnnoBox> b_boxes, const Region& region);

Tensor adjust_brightness(const Tensor& img, double factor);  // clamped to [0,1]
Tensor to_grayscale(const Tensor& img);                      // luma copied to all channels

// ---- synthetic dataset ---------------------------------------------------------

struct SynthSample {
    Tensor image;
    ImageAnnotation anno;
};

// Deterministic desk-scale stand-in dataset: gradient-plus-noise backgrounds
// with 1-4 high-contrast shapes per image, class-specific geometry (vertical
// bars for D00/D01, horizontal for D10/D11, patches, dark blobs, short
// streaks, striped crossings), exact ground truth. Per-image state derives
// from (seed, index), so images are independent.
std::vector<SynthSample> synth_generate(int n, std::uint64_t seed, int width = 320,
                                        int height = 256);

// ---- dataset bookkeeping -------------------------------------------------------

// Reference totals for the real road-damage corpus; checked when that corpus
// is supplied to the tools.
inline constexpr long kReferenceImageCount = 9053;
inline constexpr long kReferenceBoxCount = 15435;

void validate_dataset_counts(long images, long boxes);

}  // namespace dsnet
