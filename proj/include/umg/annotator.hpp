#pragma once

#include "umg/errors.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace umg {

struct PixelBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }
};

double box_iou(const PixelBox& a, const PixelBox& b);

struct Caption {
    std::string text;
    std::string source;
    double score = 0.0;
};

struct Region {
    PixelBox box;
    std::string tag;
    double confidence = 0.0;
    std::vector<std::string> captions;
    std::optional<double> stability;
};

struct AnnotationRecord {
    std::string image_id;
    int width = 0;
    int height = 0;
    std::vector<std::string> image_tags;
    std::vector<Caption> image_captions;
    std::vector<Region> regions;

    void validate() const;
};

// Stand-in for a box-prompted segmenter: returns a row-major width*height
// binary mask for a box.
using MaskOracle = std::function<std::vector<uint8_t>(const PixelBox&)>;

// Single-pass, mergeable corpus statistics. Raw counts are kept so that
// merging shards stays associative and commutative; derived quantities
// (bucket proportions, mean lengths) are computed on demand.
struct CorpusStats {
    int64_t images = 0;
    int64_t regions = 0;
    std::map<std::string, int64_t> category_counts;
    std::array<int64_t, 5> bucket_counts{}; // Tiny, Small, Medium, Large, Huge
    int64_t image_caption_count = 0;
    int64_t image_caption_tokens = 0;
    int64_t region_caption_count = 0;
    int64_t region_caption_tokens = 0;

    std::array<double, 5> bucket_proportions() const;
    double mean_image_caption_length() const;
    double mean_region_caption_length() const;
    int64_t categories() const { return static_cast<int64_t>(category_counts.size()); }

    void add(const AnnotationRecord& rec);
    void merge(const CorpusStats& other);
};

extern const std::array<const char*, 5> kAreaBucketNames;

// Index of the half-open area bucket [0,400), [400,1600), [1600,10000),
// [10000,40000), [40000,inf) for an area in squared pixels.
int area_bucket(double area);

// Keeps regions with confidence >= threshold ("below" the threshold are
// removed); order preserved.
std::vector<Region> filter_by_confidence(const std::vector<Region>& regions, double threshold);

// Greedy class-agnostic NMS: sort by confidence descending (stable, insertion
// order breaks ties), keep the top box, suppress remaining boxes with
// IoU > iou_threshold against it, repeat.
std::vector<Region> nms_merge(const std::vector<Region>& regions, double iou_threshold);

// Mean mask IoU between the base box's mask and masks of diagonally
// translated copies. Translations are symmetric pairs along the main and
// anti-diagonal at `magnitude` of the box diagonal. Two empty masks count as
// IoU 1.
double jitter_stability(const PixelBox& box, const MaskOracle& oracle, int width, int height,
                        int jitters = 4, double magnitude = 0.05);

// Normalization used for dedup: case-fold, collapse internal whitespace,
// strip terminal punctuation.
std::string normalize_caption(const std::string& text);

// Removes duplicates under normalize_caption, keeping first occurrences in
// their original (unnormalized) form.
std::vector<std::string> dedup_captions(const std::vector<std::string>& captions);

// Deterministic caption-quality stub: length-normalized token overlap between
// the caption and the tag list.
double score_caption(const std::string& text, const std::vector<std::string>& tags);

// Full record pipeline used by `annotate`: confidence filter, NMS, caption
// dedup, stability scoring + cutoff when an oracle is supplied.
struct AnnotatePipelineConfig {
    double confidence = 0.3;
    double nms_iou = 0.5;
    double stability = 0.7;
    int jitters = 4;
    double jitter_magnitude = 0.05;
};
AnnotationRecord annotate_record(const AnnotationRecord& rec, const AnnotatePipelineConfig& cfg,
                                 const MaskOracle* oracle = nullptr);

// JSON-lines corpus I/O. One AnnotationRecord per line, field names exactly
// as in the type definitions, boxes in pixels.
std::string record_to_json(const AnnotationRecord& rec);
AnnotationRecord record_from_json(const std::string& line);
std::vector<AnnotationRecord> read_corpus(const std::string& path);
void write_corpus(const std::string& path, const std::vector<AnnotationRecord>& records);

std::string stats_to_json(const CorpusStats& stats);

CorpusStats compute_stats(const std::vector<AnnotationRecord>& records);

} // namespace umg
