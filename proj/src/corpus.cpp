#include "umg/corpus.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace umg {

namespace {

const std::vector<std::string> kColors = {"red", "green", "blue", "yellow", "magenta", "cyan"};
const std::vector<std::string> kShapes = {"circle", "square", "triangle", "cross"};
const float kColorRgb[6][3] = {{0.9f, 0.15f, 0.15f}, {0.15f, 0.85f, 0.2f}, {0.2f, 0.3f, 0.9f},
                               {0.9f, 0.85f, 0.15f}, {0.85f, 0.2f, 0.85f}, {0.15f, 0.85f, 0.85f}};
// Shifted domain: darker, desaturated palette on a bright background.
const float kColorRgbShifted[6][3] = {{0.6f, 0.1f, 0.1f},  {0.1f, 0.55f, 0.15f},
                                      {0.15f, 0.2f, 0.6f}, {0.6f, 0.55f, 0.1f},
                                      {0.55f, 0.1f, 0.55f}, {0.1f, 0.55f, 0.55f}};
const std::vector<std::pair<int, int>> kHeldOut = {{0, 3}, {1, 2}, {2, 1}, {3, 0}};

} // namespace

const std::vector<std::string>& color_names() { return kColors; }
const std::vector<std::string>& shape_names() { return kShapes; }
const std::vector<std::pair<int, int>>& held_out_combos() { return kHeldOut; }

bool is_held_out(int color, int shape) {
    return std::find(kHeldOut.begin(), kHeldOut.end(), std::make_pair(color, shape)) !=
           kHeldOut.end();
}

Vocabulary::Vocabulary() {
    words_ = {"<pad>", "a", "the", "photo", "of", "at", "and"};
    for (const auto& c : kColors) words_.push_back(c);
    for (const auto& s : kShapes) words_.push_back(s);
    for (const char* w : {"top", "bottom", "left", "right"}) words_.push_back(w);
}

int Vocabulary::id(const std::string& word) const {
    auto it = std::find(words_.begin(), words_.end(), word);
    if (it == words_.end()) throw ContractError("vocabulary: unknown word '" + word + "'");
    return static_cast<int>(it - words_.begin());
}

const std::string& Vocabulary::word(int i) const {
    if (i < 0 || i >= size()) throw ContractError("vocabulary: id out of range");
    return words_[static_cast<size_t>(i)];
}

std::vector<int> Vocabulary::encode(const std::string& text, int max_len) const {
    std::istringstream in(text);
    std::vector<int> ids;
    std::string w;
    while (in >> w) ids.push_back(id(w));
    if (ids.empty()) throw ContractError("vocabulary: empty string");
    if (static_cast<int>(ids.size()) > max_len)
        throw ContractError("vocabulary: '" + text + "' exceeds max length " +
                            std::to_string(max_len));
    return ids;
}

namespace {

struct CellPos {
    int cx, cy; // cell indices in a 2x2 layout
    const char* name() const {
        static const char* names[4] = {"top left", "top right", "bottom left", "bottom right"};
        return names[cy * 2 + cx];
    }
};

// Renders one shape into the CHW buffer and returns its tight pixel bbox.
PixelBox draw_shape(std::vector<float>& px, int img, int shape, int color, int cx, int cy,
                    int size, int jx, int jy, bool shifted) {
    const int half = img / 2;
    const int x0 = cx * half + (half - size) / 2 + jx;
    const int y0 = cy * half + (half - size) / 2 + jy;
    const float(&rgb)[3] = shifted ? kColorRgbShifted[color] : kColorRgb[color];
    auto set = [&](int x, int y) {
        if (x < 0 || y < 0 || x >= img || y >= img) return;
        for (int c = 0; c < 3; ++c) px[static_cast<size_t>((c * img + y) * img + x)] = rgb[c];
    };
    int minx = img, miny = img, maxx = -1, maxy = -1;
    auto mark = [&](int x, int y) {
        set(x, y);
        minx = std::min(minx, x);
        miny = std::min(miny, y);
        maxx = std::max(maxx, x);
        maxy = std::max(maxy, y);
    };
    const double r = size / 2.0;
    const double ccx = x0 + r, ccy = y0 + r;
    for (int y = y0; y < y0 + size; ++y)
        for (int x = x0; x < x0 + size; ++x) {
            bool on = false;
            switch (shape) {
            case 0: // circle
                on = (x + 0.5 - ccx) * (x + 0.5 - ccx) + (y + 0.5 - ccy) * (y + 0.5 - ccy) <=
                     r * r;
                break;
            case 1: // square
                on = true;
                break;
            case 2: // triangle (apex up)
                on = std::abs(x + 0.5 - ccx) <= (y - y0 + 0.5) * r / size * 1.0 &&
                     y - y0 >= 0;
                break;
            case 3: // cross
                on = std::abs(x + 0.5 - ccx) <= size / 6.0 || std::abs(y + 0.5 - ccy) <= size / 6.0;
                break;
            }
            if (on) mark(x, y);
        }
    return {static_cast<double>(minx), static_cast<double>(miny), static_cast<double>(maxx + 1),
            static_cast<double>(maxy + 1)};
}

} // namespace

std::string tag_prompt(const std::string& tag) { return "a photo of " + tag; }

std::vector<SyntheticScene> gen_corpus(const CorpusSpec& spec) {
    if (spec.n_images < 1) throw ContractError("gen_corpus: n_images must be >= 1");
    if (spec.max_regions < 1 || spec.max_regions > 4)
        throw ContractError("gen_corpus: max_regions must be in [1,4]");
    std::mt19937_64 rng(spec.seed);
    std::vector<std::pair<int, int>> train_combos;
    for (int c = 0; c < static_cast<int>(kColors.size()); ++c)
        for (int s = 0; s < static_cast<int>(kShapes.size()); ++s)
            if (!is_held_out(c, s)) train_combos.emplace_back(c, s);
    const auto& pool = spec.held_out_only ? kHeldOut : train_combos;

    std::vector<SyntheticScene> out;
    out.reserve(static_cast<size_t>(spec.n_images));
    std::uniform_int_distribution<int> nreg(1, spec.max_regions);
    std::uniform_int_distribution<size_t> combo(0, pool.size() - 1);
    std::uniform_int_distribution<int> jitter(-1, 1), cell(0, 3);
    std::uniform_int_distribution<int> sz(10, 12);
    std::uniform_real_distribution<float> noise(-0.02f, 0.02f);

    const int img = spec.image_size;
    for (int i = 0; i < spec.n_images; ++i) {
        SyntheticScene scene;
        scene.pixels.assign(static_cast<size_t>(3 * img * img), 0.0f);
        const float bg = spec.shifted ? 0.55f : 0.1f;
        for (auto& v : scene.pixels) v = bg + noise(rng);
        auto& rec = scene.record;
        {
            std::ostringstream id;
            id << (spec.held_out_only ? "eval_" : "img_");
            id.width(6);
            id.fill('0');
            id << i;
            rec.image_id = id.str();
        }
        rec.width = img;
        rec.height = img;

        const int n = nreg(rng);
        std::vector<int> cells = {0, 1, 2, 3};
        for (int k = 3; k > 0; --k) std::swap(cells[static_cast<size_t>(k)],
                                              cells[static_cast<size_t>(cell(rng) % (k + 1))]);
        for (int k = 0; k < n; ++k) {
            const auto [ci, si] = pool[combo(rng)];
            const CellPos pos{cells[static_cast<size_t>(k)] % 2,
                              cells[static_cast<size_t>(k)] / 2};
            auto box = draw_shape(scene.pixels, img, si, ci, pos.cx, pos.cy, sz(rng),
                                  jitter(rng), jitter(rng), spec.shifted);
            Region r;
            r.box = box;
            r.tag = kColors[static_cast<size_t>(ci)] + " " + kShapes[static_cast<size_t>(si)];
            r.confidence = 1.0;
            r.captions = {"a " + r.tag, "the " + r.tag};
            rec.regions.push_back(r);
            if (k == 0) {
                // the first region is the one the image captions describe
                const std::string where = pos.name();
                rec.image_captions.push_back(
                    {"a " + r.tag + " at the " + where, "grammar", 1.0});
                rec.image_captions.push_back(
                    {"the " + r.tag + " at the " + where, "grammar", 1.0});
            }
            if (std::find(rec.image_tags.begin(), rec.image_tags.end(), r.tag) ==
                rec.image_tags.end())
                rec.image_tags.push_back(r.tag);
        }
        rec.validate();
        out.push_back(std::move(scene));
    }
    return out;
}

namespace {

void put_u32(std::ostream& o, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    o.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("image pack truncated while reading " + what);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

} // namespace

void write_image_pack(const std::string& path, const std::vector<SyntheticScene>& scenes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image pack " + path);
    out.write("UMGI", 4);
    put_u32(out, 1);
    put_u32(out, static_cast<uint32_t>(scenes.size()));
    const uint32_t c = 3;
    const uint32_t h = scenes.empty() ? 0 : static_cast<uint32_t>(scenes[0].record.height);
    const uint32_t w = scenes.empty() ? 0 : static_cast<uint32_t>(scenes[0].record.width);
    put_u32(out, c);
    put_u32(out, h);
    put_u32(out, w);
    for (const auto& s : scenes) {
        if (s.pixels.size() != static_cast<size_t>(c) * h * w)
            throw ContractError("image pack: inconsistent image dimensions");
        out.write(reinterpret_cast<const char*>(s.pixels.data()),
                  static_cast<std::streamsize>(s.pixels.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed for image pack " + path);
}

std::vector<std::vector<float>> read_image_pack(const std::string& path, int expect_channels,
                                                int expect_size) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image pack " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "UMGI", 4) != 0)
        throw FormatError("image pack " + path + ": bad magic");
    if (get_u32(in, "version") != 1) throw FormatError("image pack " + path + ": bad version");
    const uint32_t count = get_u32(in, "count");
    const uint32_t c = get_u32(in, "channels");
    const uint32_t h = get_u32(in, "height");
    const uint32_t w = get_u32(in, "width");
    if (static_cast<int>(c) != expect_channels || static_cast<int>(h) != expect_size ||
        static_cast<int>(w) != expect_size)
        throw FormatError("image pack " + path + ": dimensions do not match the run config");
    std::vector<std::vector<float>> out(count);
    const size_t n = static_cast<size_t>(c) * h * w;
    for (uint32_t i = 0; i < count; ++i) {
        out[i].resize(n);
        if (!in.read(reinterpret_cast<char*>(out[i].data()),
                     static_cast<std::streamsize>(n * sizeof(float))))
            throw FormatError("image pack " + path + ": truncated at image " + std::to_string(i));
    }
    return out;
}

void write_scene_corpus(const std::string& dir, const std::vector<SyntheticScene>& scenes) {
    std::filesystem::create_directories(dir);
    std::vector<AnnotationRecord> recs;
    recs.reserve(scenes.size());
    for (const auto& s : scenes) recs.push_back(s.record);
    write_corpus(dir + "/records.jsonl", recs);
    write_image_pack(dir + "/images.bin", scenes);
}

std::vector<SyntheticScene> read_scene_corpus(const std::string& dir, int expect_channels,
                                              int expect_size) {
    auto recs = read_corpus(dir + "/records.jsonl");
    auto imgs = read_image_pack(dir + "/images.bin", expect_channels, expect_size);
    if (recs.size() != imgs.size())
        throw FormatError("scene corpus " + dir + ": record/image count mismatch");
    std::vector<SyntheticScene> out(recs.size());
    for (size_t i = 0; i < recs.size(); ++i) {
        out[i].record = std::move(recs[i]);
        out[i].pixels = std::move(imgs[i]);
    }
    return out;
}

TextBatch encode_strings(const Vocabulary& vocab, const std::vector<std::string>& texts,
                         int text_len) {
    TextBatch b;
    for (const auto& t : texts) {
        auto ids = vocab.encode(t, text_len);
        b.lengths.push_back(static_cast<int>(ids.size()));
        for (int i = 0; i < text_len; ++i)
            b.token_ids.push_back(i < static_cast<int>(ids.size()) ? ids[static_cast<size_t>(i)]
                                                                   : 0);
    }
    return b;
}

TrainingBatch make_batch(const std::vector<SyntheticScene>& scenes,
                         const std::vector<size_t>& indices, std::mt19937_64& rng) {
    if (indices.empty()) throw ContractError("make_batch: empty index list");
    const auto& first = scenes.at(indices[0]).record;
    const int img = first.width;
    TrainingBatch batch;
    std::vector<float> px;
    px.reserve(indices.size() * scenes.at(indices[0]).pixels.size());
    batch.image_tag_offsets.push_back(0);
    for (size_t bi = 0; bi < indices.size(); ++bi) {
        const auto& scene = scenes.at(indices[bi]);
        const auto& rec = scene.record;
        px.insert(px.end(), scene.pixels.begin(), scene.pixels.end());
        std::uniform_int_distribution<size_t> pick(0, rec.image_captions.size() - 1);
        batch.image_captions.push_back(rec.image_captions[pick(rng)].text);
        auto tags = rec.image_tags;
        std::sort(tags.begin(), tags.end());
        for (const auto& t : tags) batch.image_tags.push_back(t);
        batch.image_tag_offsets.push_back(static_cast<int64_t>(batch.image_tags.size()));
        for (const auto& r : rec.regions) {
            batch.boxes.boxes.push_back({r.box.x0 / img, r.box.y0 / img, r.box.x1 / img,
                                         r.box.y1 / img, static_cast<int64_t>(bi)});
            std::uniform_int_distribution<size_t> rpick(0, r.captions.size() - 1);
            batch.region_captions.push_back(r.captions[rpick(rng)]);
            batch.region_tags.push_back(r.tag);
        }
    }
    batch.images = Tensor<float>({static_cast<int64_t>(indices.size()), 3, img, img},
                                 std::move(px));
    return batch;
}

} // namespace umg
