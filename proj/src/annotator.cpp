#include "umg/annotator.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace umg {

using nlohmann::json;

double box_iou(const PixelBox& a, const PixelBox& b) {
    const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

void AnnotationRecord::validate() const {
    if (width <= 0 || height <= 0)
        throw ContractError("record " + image_id + ": non-positive image dimensions");
    for (const auto& c : image_captions)
        if (c.text.empty()) throw ContractError("record " + image_id + ": empty image caption");
    for (const auto& r : regions) {
        if (!(r.box.x0 < r.box.x1) || !(r.box.y0 < r.box.y1))
            throw ContractError("record " + image_id + ": degenerate region box");
        if (r.box.x0 < 0 || r.box.y0 < 0 || r.box.x1 > width || r.box.y1 > height)
            throw ContractError("record " + image_id + ": region box outside image bounds");
        if (r.confidence < 0.0 || r.confidence > 1.0)
            throw ContractError("record " + image_id + ": confidence outside [0,1]");
        if (r.stability && (*r.stability < 0.0 || *r.stability > 1.0))
            throw ContractError("record " + image_id + ": stability outside [0,1]");
        for (const auto& c : r.captions)
            if (c.empty()) throw ContractError("record " + image_id + ": empty region caption");
    }
}

const std::array<const char*, 5> kAreaBucketNames = {"tiny", "small", "medium", "large", "huge"};

int area_bucket(double area) {
    if (area < 400.0) return 0;
    if (area < 1600.0) return 1;
    if (area < 10000.0) return 2;
    if (area < 40000.0) return 3;
    return 4;
}

std::vector<Region> filter_by_confidence(const std::vector<Region>& regions, double threshold) {
    if (threshold < 0.0 || threshold > 1.0)
        throw ContractError("confidence threshold must be in [0,1]");
    std::vector<Region> out;
    for (const auto& r : regions)
        if (r.confidence >= threshold) out.push_back(r);
    return out;
}

std::vector<Region> nms_merge(const std::vector<Region>& regions, double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
        throw ContractError("NMS IoU threshold must be in (0,1)");
    std::vector<size_t> order(regions.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return regions[a].confidence > regions[b].confidence;
    });
    std::vector<Region> kept;
    std::vector<bool> suppressed(regions.size(), false);
    for (size_t oi = 0; oi < order.size(); ++oi) {
        const size_t i = order[oi];
        if (suppressed[i]) continue;
        kept.push_back(regions[i]);
        for (size_t oj = oi + 1; oj < order.size(); ++oj) {
            const size_t j = order[oj];
            if (!suppressed[j] && box_iou(regions[i].box, regions[j].box) > iou_threshold)
                suppressed[j] = true;
        }
    }
    return kept;
}

namespace {

double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const bool pa = a[i] != 0, pb = b[i] != 0;
        inter += pa && pb;
        uni += pa || pb;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace

double jitter_stability(const PixelBox& box, const MaskOracle& oracle, int width, int height,
                        int jitters, double magnitude) {
    if (jitters < 1) throw ContractError("jitter_stability: jitters must be >= 1");
    if (magnitude <= 0.0) throw ContractError("jitter_stability: magnitude must be > 0");
    const size_t expect = static_cast<size_t>(width) * static_cast<size_t>(height);
    auto masked = [&](const PixelBox& b) {
        auto m = oracle(b);
        if (m.size() != expect)
            throw ContractError("jitter_stability: oracle mask size " + std::to_string(m.size()) +
                                " does not match image " + std::to_string(width) + "x" +
                                std::to_string(height));
        return m;
    };
    const auto base = masked(box);
    // symmetric pairs along the main and anti-diagonal; magnitudes grow by a
    // full step per completed cycle of the four directions
    static const int dirs[4][2] = {{1, 1}, {-1, -1}, {1, -1}, {-1, 1}};
    double total = 0.0;
    for (int j = 0; j < jitters; ++j) {
        const double m = magnitude * (1.0 + j / 4);
        const double dx = dirs[j % 4][0] * m * box.width();
        const double dy = dirs[j % 4][1] * m * box.height();
        PixelBox moved{box.x0 + dx, box.y0 + dy, box.x1 + dx, box.y1 + dy};
        total += mask_iou(base, masked(moved));
    }
    return total / static_cast<double>(jitters);
}

std::string normalize_caption(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!out.empty()) pending_space = true;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    while (!out.empty()) {
        const char c = out.back();
        if (c == '.' || c == '!' || c == '?' || c == ',' || c == ';' || c == ':')
            out.pop_back();
        else
            break;
    }
    return out;
}

std::vector<std::string> dedup_captions(const std::vector<std::string>& captions) {
    std::vector<std::string> out;
    std::vector<std::string> seen;
    for (const auto& c : captions) {
        auto key = normalize_caption(c);
        if (std::find(seen.begin(), seen.end(), key) == seen.end()) {
            seen.push_back(std::move(key));
            out.push_back(c);
        }
    }
    return out;
}

namespace {

std::vector<std::string> tokenize_ws(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> toks;
    std::string t;
    while (in >> t) toks.push_back(t);
    return toks;
}

} // namespace

double score_caption(const std::string& text, const std::vector<std::string>& tags) {
    auto toks = tokenize_ws(normalize_caption(text));
    if (toks.empty()) return 0.0;
    int64_t hits = 0;
    for (const auto& tok : toks)
        for (const auto& tag : tags)
            if (tok == normalize_caption(tag)) {
                ++hits;
                break;
            }
    return static_cast<double>(hits) / static_cast<double>(toks.size());
}

AnnotationRecord annotate_record(const AnnotationRecord& rec, const AnnotatePipelineConfig& cfg,
                                 const MaskOracle* oracle) {
    rec.validate();
    AnnotationRecord out = rec;
    out.regions = nms_merge(filter_by_confidence(rec.regions, cfg.confidence), cfg.nms_iou);
    for (auto& r : out.regions) r.captions = dedup_captions(r.captions);
    std::vector<std::string> texts;
    for (const auto& c : out.image_captions) texts.push_back(c.text);
    auto kept_texts = dedup_captions(texts);
    std::vector<Caption> kept_caps;
    for (const auto& c : out.image_captions)
        if (std::find(kept_texts.begin(), kept_texts.end(), c.text) != kept_texts.end())
            kept_caps.push_back(c);
    out.image_captions = std::move(kept_caps);
    if (oracle) {
        std::vector<Region> stable;
        for (auto& r : out.regions) {
            r.stability = jitter_stability(r.box, *oracle, out.width, out.height, cfg.jitters,
                                           cfg.jitter_magnitude);
            if (*r.stability >= cfg.stability) stable.push_back(r);
        }
        out.regions = std::move(stable);
    }
    return out;
}

std::array<double, 5> CorpusStats::bucket_proportions() const {
    std::array<double, 5> p{};
    const double total = static_cast<double>(
        std::accumulate(bucket_counts.begin(), bucket_counts.end(), int64_t{0}));
    if (total > 0)
        for (size_t i = 0; i < 5; ++i) p[i] = static_cast<double>(bucket_counts[i]) / total;
    return p;
}

double CorpusStats::mean_image_caption_length() const {
    return image_caption_count == 0 ? 0.0
                                    : static_cast<double>(image_caption_tokens) /
                                          static_cast<double>(image_caption_count);
}

double CorpusStats::mean_region_caption_length() const {
    return region_caption_count == 0 ? 0.0
                                     : static_cast<double>(region_caption_tokens) /
                                           static_cast<double>(region_caption_count);
}

void CorpusStats::add(const AnnotationRecord& rec) {
    ++images;
    for (const auto& c : rec.image_captions) {
        ++image_caption_count;
        image_caption_tokens += static_cast<int64_t>(tokenize_ws(c.text).size());
    }
    for (const auto& r : rec.regions) {
        ++regions;
        ++category_counts[r.tag];
        ++bucket_counts[static_cast<size_t>(area_bucket(r.box.area()))];
        for (const auto& c : r.captions) {
            ++region_caption_count;
            region_caption_tokens += static_cast<int64_t>(tokenize_ws(c).size());
        }
    }
}

void CorpusStats::merge(const CorpusStats& other) {
    images += other.images;
    regions += other.regions;
    for (const auto& [k, v] : other.category_counts) category_counts[k] += v;
    for (size_t i = 0; i < 5; ++i) bucket_counts[i] += other.bucket_counts[i];
    image_caption_count += other.image_caption_count;
    image_caption_tokens += other.image_caption_tokens;
    region_caption_count += other.region_caption_count;
    region_caption_tokens += other.region_caption_tokens;
}

CorpusStats compute_stats(const std::vector<AnnotationRecord>& records) {
    CorpusStats s;
    for (const auto& r : records) s.add(r);
    return s;
}

namespace {

json region_to_json(const Region& r) {
    json j{{"box", {r.box.x0, r.box.y0, r.box.x1, r.box.y1}},
           {"tag", r.tag},
           {"confidence", r.confidence},
           {"captions", r.captions}};
    if (r.stability) j["stability"] = *r.stability;
    return j;
}

Region region_from_json(const json& j) {
    Region r;
    auto b = j.at("box");
    if (!b.is_array() || b.size() != 4) throw FormatError("region box must be [x0,y0,x1,y1]");
    r.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    r.tag = j.at("tag").get<std::string>();
    r.confidence = j.at("confidence").get<double>();
    r.captions = j.at("captions").get<std::vector<std::string>>();
    if (j.contains("stability")) r.stability = j["stability"].get<double>();
    return r;
}

} // namespace

std::string record_to_json(const AnnotationRecord& rec) {
    json caps = json::array();
    for (const auto& c : rec.image_captions)
        caps.push_back({{"text", c.text}, {"source", c.source}, {"score", c.score}});
    json regs = json::array();
    for (const auto& r : rec.regions) regs.push_back(region_to_json(r));
    json j{{"image_id", rec.image_id}, {"width", rec.width},        {"height", rec.height},
           {"image_tags", rec.image_tags}, {"image_captions", caps}, {"regions", regs}};
    return j.dump();
}

AnnotationRecord record_from_json(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad record JSON: ") + e.what());
    }
    try {
        AnnotationRecord rec;
        rec.image_id = j.at("image_id").get<std::string>();
        rec.width = j.at("width").get<int>();
        rec.height = j.at("height").get<int>();
        rec.image_tags = j.at("image_tags").get<std::vector<std::string>>();
        for (const auto& c : j.at("image_captions")) {
            Caption cap;
            cap.text = c.at("text").get<std::string>();
            cap.source = c.value("source", "");
            cap.score = c.value("score", 0.0);
            rec.image_captions.push_back(std::move(cap));
        }
        for (const auto& r : j.at("regions")) rec.regions.push_back(region_from_json(r));
        rec.validate();
        return rec;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad record fields: ") + e.what());
    }
}

std::vector<AnnotationRecord> read_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus " + path);
    std::vector<AnnotationRecord> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(line));
        } catch (const FormatError& e) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_corpus(const std::string& path, const std::vector<AnnotationRecord>& records) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write corpus " + path);
    for (const auto& r : records) out << record_to_json(r) << '\n';
    if (!out) throw IoError("write failed for corpus " + path);
}

std::string stats_to_json(const CorpusStats& stats) {
    auto props = stats.bucket_proportions();
    json buckets;
    for (size_t i = 0; i < 5; ++i) buckets[kAreaBucketNames[i]] = props[i];
    json j{{"images", stats.images},
           {"regions", stats.regions},
           {"categories", stats.categories()},
           {"category_counts", stats.category_counts},
           {"area_buckets", buckets},
           {"mean_image_caption_length", stats.mean_image_caption_length()},
           {"mean_region_caption_length", stats.mean_region_caption_length()}};
    return j.dump(2);
}

} // namespace umg
