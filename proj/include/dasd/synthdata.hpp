#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dasd/backbone.hpp"

namespace dasd {

// Deterministic bilingual multi-style caption/visual world. The two
// languages draw content tokens from disjoint integer ranges; target
// captions come in K labelled template families (word order, function
// words, length band) so style is a measurable ground-truth signal.

struct WorldConfig {
    std::uint64_t seed = 1;
    std::size_t n_concepts = 200;
    std::size_t styles = 4;  // K
    std::size_t captions_per_concept = 5;
    double visual_noise = 0.05;
    double mt_noise = 0.0;  // probability of near-synonym substitution per content token
    std::size_t visual_dim = 48;

    void validate() const;
};

struct ConceptRecord {
    int id = 0;
    int quant = 0, obj = 0, mod = 0, loc = 0;  // attribute slot indices
    std::vector<double> latent;                // visual_dim, composed from attribute vectors
};

struct World {
    WorldConfig config;
    std::vector<ConceptRecord> concepts;
};

struct TripletExample {
    TokenSequence source_tokens;
    TokenSequence target_tokens;
    int target_style = 0;
    VisualFeature visual;
    int concept_id = 0;
};

class Corpus {
public:
    WorldConfig world_config;
    bool zero_shot = true;
    std::array<std::size_t, 3> split_ratio{8, 1, 1};
    std::vector<TripletExample> train, val, test;

    const std::vector<TripletExample>& split(const std::string& name) const;
    std::size_t total() const { return train.size() + val.size() + test.size(); }
};

World gen_world(const WorldConfig& cfg);

// Token ids for one caption. Source captions use a single canonical
// register and ignore style; target captions follow the style template.
// salt selects among the per-concept caption variants.
TokenSequence render_caption(const World& world, const ConceptRecord& rec, EmbeddingSide lang,
                             std::size_t style, std::uint64_t salt);

// Concept latent plus Gaussian noise, deterministic per (concept, salt).
VisualFeature render_visual(const World& world, const ConceptRecord& rec, double noise,
                            std::uint64_t salt);

Corpus build_corpus(const World& world, std::array<std::size_t, 3> split_ratio, bool zero_shot);

// Line-delimited serialization: metadata header first, then one JSON
// object per triplet with integer token arrays and a base64 little-endian
// float payload for the visual feature. Bit-stable for fixed inputs.
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);
std::string corpus_to_string(const Corpus& corpus);

// Nearest-latent classification of a visual feature over world concepts;
// the alignment oracle for corpus property tests.
int nearest_concept(const World& world, const VisualFeature& v);

// Token-range layout shared with the backbone vocabularies.
struct TokenRanges {
    // [lo, hi) pairs
    static constexpr std::array<std::int32_t, 2> kSourceQuant{3, 11};
    static constexpr std::array<std::int32_t, 2> kSourceMod{11, 27};
    static constexpr std::array<std::int32_t, 2> kSourceObj{27, 91};
    static constexpr std::array<std::int32_t, 2> kSourceLoc{91, 105};
    static constexpr std::array<std::int32_t, 2> kSourceFiller{105, 128};
    static constexpr std::array<std::int32_t, 2> kTargetQuant{128, 136};
    static constexpr std::array<std::int32_t, 2> kTargetMod{136, 152};
    static constexpr std::array<std::int32_t, 2> kTargetObj{152, 216};
    static constexpr std::array<std::int32_t, 2> kTargetLoc{216, 230};
    static constexpr std::array<std::int32_t, 2> kTargetStyleFunc{230, 256};
};

}  // namespace dasd
