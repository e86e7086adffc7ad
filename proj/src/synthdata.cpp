#include "dasd/synthdata.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dasd/errors.hpp"
#include "dasd/rng.hpp"
#include "json.hpp"

namespace dasd {

namespace {

using OrderedJson = nlohmann::ordered_json;

constexpr std::size_t kQuantCount = 8;
constexpr std::size_t kModCount = 16;
constexpr std::size_t kObjCount = 64;
constexpr std::size_t kLocCount = 14;

std::uint64_t mix_key(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
    SplitMix64 h(a ^ (b * 0x9E3779B97F4A7C15ULL) ^ (c * 0xC2B2AE3D27D4EB4FULL) ^
                 (d * 0x165667B19E3779F9ULL));
    return h.next_u64();
}

std::int32_t slot_token(const std::array<std::int32_t, 2>& range, int index) {
    return range[0] + static_cast<std::int32_t>(index % (range[1] - range[0]));
}

// Style-private function words: six consecutive ids per style family.
std::int32_t style_func_token(std::size_t style, std::size_t which) {
    auto lo = TokenRanges::kTargetStyleFunc[0];
    auto width = TokenRanges::kTargetStyleFunc[1] - lo;
    return lo + static_cast<std::int32_t>((style * 6 + which) % static_cast<std::size_t>(width));
}

const std::string kBase64Chars =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (std::size_t i = 0; i < n; i += 3) {
        unsigned int chunk = p[i] << 16;
        if (i + 1 < n) chunk |= p[i + 1] << 8;
        if (i + 2 < n) chunk |= p[i + 2];
        out.push_back(kBase64Chars[(chunk >> 18) & 63]);
        out.push_back(kBase64Chars[(chunk >> 12) & 63]);
        out.push_back(i + 1 < n ? kBase64Chars[(chunk >> 6) & 63] : '=');
        out.push_back(i + 2 < n ? kBase64Chars[chunk & 63] : '=');
    }
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& s) {
    auto value_of = [](char c) -> int {
        auto pos = kBase64Chars.find(c);
        if (pos == std::string::npos) throw InvalidValue("corrupt base64 payload");
        return static_cast<int>(pos);
    };
    std::vector<unsigned char> out;
    out.reserve(s.size() / 4 * 3);
    for (std::size_t i = 0; i + 3 < s.size(); i += 4) {
        int a = value_of(s[i]);
        int b = value_of(s[i + 1]);
        out.push_back(static_cast<unsigned char>((a << 2) | (b >> 4)));
        if (s[i + 2] == '=') break;
        int c = value_of(s[i + 2]);
        out.push_back(static_cast<unsigned char>(((b & 15) << 4) | (c >> 2)));
        if (s[i + 3] == '=') break;
        int d = value_of(s[i + 3]);
        out.push_back(static_cast<unsigned char>(((c & 3) << 6) | d));
    }
    return out;
}

std::string encode_visual(const VisualFeature& v) {
    return base64_encode(v.data(), v.size() * sizeof(double));
}

VisualFeature decode_visual(const std::string& s) {
    auto bytes = base64_decode(s);
    if (bytes.size() % sizeof(double) != 0) throw InvalidValue("visual payload truncated");
    VisualFeature v(bytes.size() / sizeof(double));
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return v;
}

std::vector<std::vector<double>> attribute_bank(SplitMix64& rng, std::size_t count,
                                                std::size_t dim, double scale) {
    std::vector<std::vector<double>> bank(count);
    for (auto& vec : bank) {
        vec.resize(dim);
        for (auto& x : vec) x = rng.normal(0.0, scale);
    }
    return bank;
}

}  // namespace

void WorldConfig::validate() const {
    std::vector<std::string> problems;
    if (n_concepts < 10) problems.push_back("n_concepts must be >= 10");
    if (styles < 1) problems.push_back("styles must be >= 1");
    if (captions_per_concept < 1) problems.push_back("captions_per_concept must be >= 1");
    if (visual_noise < 0) problems.push_back("visual_noise must be >= 0");
    if (mt_noise < 0 || mt_noise > 1) problems.push_back("mt_noise must lie in [0, 1]");
    if (visual_dim < 4) problems.push_back("visual_dim must be >= 4");
    if (n_concepts > kObjCount * kModCount) problems.push_back("n_concepts exceeds distinct (obj, mod) pairs");
    if (!problems.empty()) {
        std::string msg = "invalid world config:";
        for (const auto& p : problems) msg += " " + p + ";";
        throw InvalidConfig(msg);
    }
}

const std::vector<TripletExample>& Corpus::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw InvalidValue("unknown split: " + name);
}

World gen_world(const WorldConfig& cfg) {
    cfg.validate();
    World world;
    world.config = cfg;

    SplitMix64 bank_rng = substream(cfg.seed, "world.banks");
    // Latents compose from per-attribute vectors so unseen concepts stay
    // reachable from token evidence (zero-shot splits remain learnable).
    auto quant_bank = attribute_bank(bank_rng, kQuantCount, cfg.visual_dim, 0.35);
    auto mod_bank = attribute_bank(bank_rng, kModCount, cfg.visual_dim, 0.7);
    auto obj_bank = attribute_bank(bank_rng, kObjCount, cfg.visual_dim, 1.0);
    auto loc_bank = attribute_bank(bank_rng, kLocCount, cfg.visual_dim, 0.5);

    // Distinct (obj, mod) pairs define concept identity.
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(kObjCount * kModCount);
    for (std::size_t o = 0; o < kObjCount; ++o)
        for (std::size_t m = 0; m < kModCount; ++m)
            pairs.emplace_back(static_cast<int>(o), static_cast<int>(m));
    SplitMix64 pick_rng = substream(cfg.seed, "world.concepts");
    pick_rng.shuffle(pairs);

    world.concepts.resize(cfg.n_concepts);
    for (std::size_t i = 0; i < cfg.n_concepts; ++i) {
        ConceptRecord& rec = world.concepts[i];
        rec.id = static_cast<int>(i);
        rec.obj = pairs[i].first;
        rec.mod = pairs[i].second;
        rec.quant = static_cast<int>(pick_rng.below(kQuantCount));
        rec.loc = static_cast<int>(pick_rng.below(kLocCount));
        rec.latent.assign(cfg.visual_dim, 0.0);
        for (std::size_t d = 0; d < cfg.visual_dim; ++d) {
            rec.latent[d] = obj_bank[rec.obj][d] + mod_bank[rec.mod][d] + loc_bank[rec.loc][d] +
                            0.5 * quant_bank[rec.quant][d] + 0.15 * pick_rng.normal();
        }
    }
    // Pairwise distinctness holds by construction (distinct attribute
    // pairs plus jitter); verify the invariant anyway.
    for (std::size_t i = 0; i < world.concepts.size(); ++i) {
        for (std::size_t j = i + 1; j < world.concepts.size(); ++j) {
            if (world.concepts[i].latent == world.concepts[j].latent) {
                throw InvalidConfig("degenerate world: identical concept latents");
            }
        }
    }
    return world;
}

TokenSequence render_caption(const World& world, const ConceptRecord& rec, EmbeddingSide lang,
                             std::size_t style, std::uint64_t salt) {
    const auto& cfg = world.config;
    if (lang == EmbeddingSide::kTarget && style >= cfg.styles) {
        throw InvalidConfig("style index out of range");
    }
    SplitMix64 rng(mix_key(cfg.seed, static_cast<std::uint64_t>(rec.id) * 2 +
                                          (lang == EmbeddingSide::kSource ? 0 : 1),
                           style, salt));

    std::vector<std::int32_t> body;
    if (lang == EmbeddingSide::kSource) {
        // Canonical register: quantifier, object, modifier, location.
        body = {slot_token(TokenRanges::kSourceQuant, rec.quant),
                slot_token(TokenRanges::kSourceObj, rec.obj),
                slot_token(TokenRanges::kSourceMod, rec.mod),
                slot_token(TokenRanges::kSourceLoc, rec.loc)};
        std::size_t fillers = rng.below(2);
        for (std::size_t f = 0; f < fillers; ++f) {
            body.push_back(slot_token(TokenRanges::kSourceFiller,
                                      static_cast<int>(rng.below(static_cast<std::uint64_t>(
                                          TokenRanges::kSourceFiller[1] - TokenRanges::kSourceFiller[0])))));
        }
    } else {
        std::int32_t q = slot_token(TokenRanges::kTargetQuant, rec.quant);
        std::int32_t o = slot_token(TokenRanges::kTargetObj, rec.obj);
        std::int32_t m = slot_token(TokenRanges::kTargetMod, rec.mod);
        std::int32_t l = slot_token(TokenRanges::kTargetLoc, rec.loc);
        // Every family keeps at least one private function word so the
        // register stays identifiable after pooling; order, function-word
        // count and length band separate the families further.
        switch (style % 4) {
            case 0:  // quantifier first, compact
                body = {q, style_func_token(style, 0), o, m, l};
                for (std::size_t f = rng.below(2); f > 0; --f)
                    body.push_back(style_func_token(style, 1 + rng.below(5)));
                break;
            case 1:  // begins with the location of the key object
                body = {style_func_token(style, 0), l, style_func_token(style, 1), q, o, m};
                for (std::size_t f = rng.below(2); f > 0; --f)
                    body.push_back(style_func_token(style, 2 + rng.below(4)));
                break;
            case 2:  // extra descriptive marker before the key object
                body = {q, m, style_func_token(style, 0),
                        style_func_token(style, 1 + rng.below(2)), o, l};
                for (std::size_t f = rng.below(2); f > 0; --f)
                    body.push_back(style_func_token(style, 3 + rng.below(3)));
                break;
            default:  // long form split in two parts by a separator
                body = {o, m, style_func_token(style, 0), l,
                        style_func_token(style, 1 + rng.below(2)), q};
                for (std::size_t f = 2 + rng.below(3); f > 0; --f)
                    body.push_back(style_func_token(style, 3 + rng.below(3)));
                break;
        }
        if (cfg.mt_noise > 0.0) {
            // Synthetic MT imperfection: content tokens occasionally land
            // on a neighbour from the same slot range.
            auto maybe_noise = [&](std::int32_t& tok, const std::array<std::int32_t, 2>& range) {
                if (rng.uniform() < cfg.mt_noise) {
                    tok = range[0] + static_cast<std::int32_t>(
                                         rng.below(static_cast<std::uint64_t>(range[1] - range[0])));
                }
            };
            for (auto& tok : body) {
                if (tok >= TokenRanges::kTargetQuant[0] && tok < TokenRanges::kTargetQuant[1])
                    maybe_noise(tok, TokenRanges::kTargetQuant);
                else if (tok >= TokenRanges::kTargetMod[0] && tok < TokenRanges::kTargetMod[1])
                    maybe_noise(tok, TokenRanges::kTargetMod);
                else if (tok >= TokenRanges::kTargetObj[0] && tok < TokenRanges::kTargetObj[1])
                    maybe_noise(tok, TokenRanges::kTargetObj);
                else if (tok >= TokenRanges::kTargetLoc[0] && tok < TokenRanges::kTargetLoc[1])
                    maybe_noise(tok, TokenRanges::kTargetLoc);
            }
        }
    }

    TokenSequence tokens;
    tokens.reserve(body.size() + 2);
    tokens.push_back(kSosToken);
    tokens.insert(tokens.end(), body.begin(), body.end());
    tokens.push_back(kEosToken);
    return tokens;
}

VisualFeature render_visual(const World& world, const ConceptRecord& rec, double noise,
                            std::uint64_t salt) {
    if (noise < 0) throw InvalidConfig("visual noise must be >= 0");
    VisualFeature v = rec.latent;
    if (noise > 0) {
        SplitMix64 rng(mix_key(world.config.seed ^ 0xA5A5A5A5ULL,
                               static_cast<std::uint64_t>(rec.id), 0, salt));
        for (auto& x : v) x += noise * rng.normal();
    }
    return v;
}

Corpus build_corpus(const World& world, std::array<std::size_t, 3> split_ratio, bool zero_shot) {
    const auto& cfg = world.config;
    std::size_t ratio_total = split_ratio[0] + split_ratio[1] + split_ratio[2];
    if (ratio_total == 0) throw InvalidConfig("split ratio sums to zero");

    Corpus corpus;
    corpus.world_config = cfg;
    corpus.zero_shot = zero_shot;
    corpus.split_ratio = split_ratio;

    auto make_triplet = [&](const ConceptRecord& rec, std::size_t j) {
        TripletExample t;
        std::size_t global = static_cast<std::size_t>(rec.id) * cfg.captions_per_concept + j;
        t.concept_id = rec.id;
        t.target_style = static_cast<int>(global % cfg.styles);
        t.source_tokens = render_caption(world, rec, EmbeddingSide::kSource, 0, j);
        t.target_tokens = render_caption(world, rec, EmbeddingSide::kTarget,
                                         static_cast<std::size_t>(t.target_style), j);
        // One visual instance per concept: every caption variant pairs
        // with the same rendered feature, as in the image-text datasets
        // this stands in for.
        t.visual = render_visual(world, rec, cfg.visual_noise, 0);
        return t;
    };

    SplitMix64 rng = substream(cfg.seed, "corpus.split");
    if (zero_shot) {
        std::vector<std::size_t> concept_order(cfg.n_concepts);
        for (std::size_t i = 0; i < concept_order.size(); ++i) concept_order[i] = i;
        rng.shuffle(concept_order);
        std::size_t n_train = cfg.n_concepts * split_ratio[0] / ratio_total;
        std::size_t n_val = cfg.n_concepts * split_ratio[1] / ratio_total;
        for (std::size_t pos = 0; pos < concept_order.size(); ++pos) {
            const ConceptRecord& rec = world.concepts[concept_order[pos]];
            auto& dst = pos < n_train ? corpus.train : (pos < n_train + n_val ? corpus.val : corpus.test);
            for (std::size_t j = 0; j < cfg.captions_per_concept; ++j)
                dst.push_back(make_triplet(rec, j));
        }
    } else {
        std::vector<std::pair<std::size_t, std::size_t>> keys;
        for (std::size_t i = 0; i < cfg.n_concepts; ++i)
            for (std::size_t j = 0; j < cfg.captions_per_concept; ++j) keys.emplace_back(i, j);
        rng.shuffle(keys);
        std::size_t total = keys.size();
        std::size_t n_train = total * split_ratio[0] / ratio_total;
        std::size_t n_val = total * split_ratio[1] / ratio_total;
        for (std::size_t pos = 0; pos < keys.size(); ++pos) {
            const ConceptRecord& rec = world.concepts[keys[pos].first];
            auto& dst = pos < n_train ? corpus.train : (pos < n_train + n_val ? corpus.val : corpus.test);
            dst.push_back(make_triplet(rec, keys[pos].second));
        }
    }

    // Canonical order inside each split: by concept, then style, then tokens.
    auto canonical = [](std::vector<TripletExample>& items) {
        std::stable_sort(items.begin(), items.end(), [](const TripletExample& a, const TripletExample& b) {
            if (a.concept_id != b.concept_id) return a.concept_id < b.concept_id;
            if (a.target_style != b.target_style) return a.target_style < b.target_style;
            return a.target_tokens < b.target_tokens;
        });
    };
    canonical(corpus.train);
    canonical(corpus.val);
    canonical(corpus.test);
    return corpus;
}

namespace {

OrderedJson triplet_to_json(const TripletExample& t, const char* split) {
    OrderedJson row;
    row["split"] = split;
    row["concept"] = t.concept_id;
    row["style"] = t.target_style;
    row["src"] = t.source_tokens;
    row["tgt"] = t.target_tokens;
    row["vis"] = encode_visual(t.visual);
    return row;
}

}  // namespace

std::string corpus_to_string(const Corpus& corpus) {
    const auto& cfg = corpus.world_config;
    OrderedJson header;
    header["format"] = "dasd.corpus.v1";
    header["seed"] = cfg.seed;
    header["n_concepts"] = cfg.n_concepts;
    header["styles"] = cfg.styles;
    header["captions_per_concept"] = cfg.captions_per_concept;
    header["visual_noise"] = cfg.visual_noise;
    header["mt_noise"] = cfg.mt_noise;
    header["visual_dim"] = cfg.visual_dim;
    header["zero_shot"] = corpus.zero_shot;
    header["split_ratio"] = corpus.split_ratio;
    header["sizes"] = {{"train", corpus.train.size()},
                       {"val", corpus.val.size()},
                       {"test", corpus.test.size()}};
    std::ostringstream out;
    out << header.dump() << "\n";
    for (const auto& t : corpus.train) out << triplet_to_json(t, "train").dump() << "\n";
    for (const auto& t : corpus.val) out << triplet_to_json(t, "val").dump() << "\n";
    for (const auto& t : corpus.test) out << triplet_to_json(t, "test").dump() << "\n";
    return out.str();
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << corpus_to_string(corpus);
    if (!out) throw IoError("failed writing " + path);
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw InvalidValue("empty corpus file");
    OrderedJson header = OrderedJson::parse(line, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "dasd.corpus.v1") {
        throw InvalidValue("not a dasd corpus file: " + path);
    }
    Corpus corpus;
    corpus.world_config.seed = header.at("seed").get<std::uint64_t>();
    corpus.world_config.n_concepts = header.at("n_concepts").get<std::size_t>();
    corpus.world_config.styles = header.at("styles").get<std::size_t>();
    corpus.world_config.captions_per_concept = header.at("captions_per_concept").get<std::size_t>();
    corpus.world_config.visual_noise = header.at("visual_noise").get<double>();
    corpus.world_config.mt_noise = header.at("mt_noise").get<double>();
    corpus.world_config.visual_dim = header.at("visual_dim").get<std::size_t>();
    corpus.zero_shot = header.at("zero_shot").get<bool>();
    auto ratio = header.at("split_ratio");
    for (std::size_t i = 0; i < 3; ++i) corpus.split_ratio[i] = ratio.at(i).get<std::size_t>();

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        OrderedJson row = OrderedJson::parse(line);
        TripletExample t;
        t.concept_id = row.at("concept").get<int>();
        t.target_style = row.at("style").get<int>();
        t.source_tokens = row.at("src").get<TokenSequence>();
        t.target_tokens = row.at("tgt").get<TokenSequence>();
        t.visual = decode_visual(row.at("vis").get<std::string>());
        std::string split = row.at("split").get<std::string>();
        if (split == "train") corpus.train.push_back(std::move(t));
        else if (split == "val") corpus.val.push_back(std::move(t));
        else if (split == "test") corpus.test.push_back(std::move(t));
        else throw InvalidValue("unknown split tag: " + split);
    }
    return corpus;
}

int nearest_concept(const World& world, const VisualFeature& v) {
    int best = -1;
    double best_dist = 0.0;
    for (const auto& rec : world.concepts) {
        double dist = 0.0;
        for (std::size_t d = 0; d < v.size(); ++d) {
            double diff = v[d] - rec.latent[d];
            dist += diff * diff;
        }
        if (best < 0 || dist < best_dist) {
            best = rec.id;
            best_dist = dist;
        }
    }
    return best;
}

}  // namespace dasd
