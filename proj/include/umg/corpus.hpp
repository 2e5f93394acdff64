#pragma once

#include "umg/annotator.hpp"
#include "umg/encoders.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace umg {

// Fixed word-level vocabulary of the synthetic caption grammar. Id 0 is the
// padding token.
class Vocabulary {
public:
    Vocabulary();
    int size() const { return static_cast<int>(words_.size()); }
    int id(const std::string& word) const; // throws ContractError on unknown word
    const std::string& word(int id) const;
    // Whitespace-tokenize and map to ids; throws on unknown words or when the
    // token count exceeds max_len.
    std::vector<int> encode(const std::string& text, int max_len) const;

private:
    std::vector<std::string> words_;
};

const std::vector<std::string>& color_names();
const std::vector<std::string>& shape_names();

// (color, shape) combinations reserved for zero-shot evaluation; never
// rendered in a training split.
const std::vector<std::pair<int, int>>& held_out_combos();
bool is_held_out(int color, int shape);

// One rendered scene: pixels in CHW float [0,1] plus its annotation record.
struct SyntheticScene {
    std::vector<float> pixels; // channels * height * width
    AnnotationRecord record;
};

struct CorpusSpec {
    uint64_t seed = 1;
    int n_images = 256;
    int max_regions = 2;
    int image_size = 32;
    bool held_out_only = false; // eval split: draw only held-out combos
    bool shifted = false;       // adapt-domain visual style (bright background)
};

// Deterministic scene generation; the same spec yields byte-identical output.
std::vector<SyntheticScene> gen_corpus(const CorpusSpec& spec);

// Binary image pack: magic "UMGI", version, count, C, H, W (u32 little
// endian), then f32 payload per image in record order.
void write_image_pack(const std::string& path, const std::vector<SyntheticScene>& scenes);
std::vector<std::vector<float>> read_image_pack(const std::string& path, int expect_channels,
                                                int expect_size);

// Writes records.jsonl + images.bin into dir; load re-pairs them by order.
void write_scene_corpus(const std::string& dir, const std::vector<SyntheticScene>& scenes);
std::vector<SyntheticScene> read_scene_corpus(const std::string& dir, int expect_channels,
                                              int expect_size);

// Batch assembly -----------------------------------------------------------

// Encodes a list of strings into one TextBatch (padded, validated).
TextBatch encode_strings(const Vocabulary& vocab, const std::vector<std::string>& texts,
                         int text_len);

// Tag prompt used for tag targets and zero-shot classification.
std::string tag_prompt(const std::string& tag);

struct TrainingBatch {
    Tensor<float> images;                    // [b, C, H, W]
    std::vector<std::string> image_captions; // one sampled caption per image
    // tags flattened with per-image segment offsets (sorted within an image)
    std::vector<std::string> image_tags;
    std::vector<int64_t> image_tag_offsets; // size b+1
    RegionBoxSet boxes;                      // normalized, image_index into batch
    std::vector<std::string> region_captions;
    std::vector<std::string> region_tags;
};

// Deterministically assembles a batch from the scene indices; caption choice
// is driven by the provided rng.
TrainingBatch make_batch(const std::vector<SyntheticScene>& scenes,
                         const std::vector<size_t>& indices, std::mt19937_64& rng);

} // namespace umg
