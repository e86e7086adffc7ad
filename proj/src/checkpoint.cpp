#include "dasd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "dasd/errors.hpp"
#include "dasd/rng.hpp"
#include "json.hpp"

namespace dasd {

namespace {

using OrderedJson = nlohmann::ordered_json;

constexpr char kMagic[5] = {'D', 'A', 'S', 'D', '1'};
constexpr std::uint32_t kVersion = 1;

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void append_doubles(std::string& payload, const std::vector<double>& data) {
    std::size_t off = payload.size();
    payload.resize(off + data.size() * sizeof(double));
    std::memcpy(payload.data() + off, data.data(), data.size() * sizeof(double));
}

OrderedJson adam_to_json(const AdamState& state) {
    OrderedJson j;
    j["t"] = state.t;
    j["beta1"] = state.beta1;
    j["beta2"] = state.beta2;
    j["epsilon"] = state.epsilon;
    return j;
}

void adam_from_json(const OrderedJson& j, AdamState& state) {
    state.t = j.at("t").get<std::uint64_t>();
    state.beta1 = j.at("beta1").get<double>();
    state.beta2 = j.at("beta2").get<double>();
    state.epsilon = j.at("epsilon").get<double>();
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path, std::uint64_t config_hash,
                     const std::string& phase, const TrainerState* trainer) {
    OrderedJson manifest;
    manifest["config_hash"] = hex64(config_hash);
    manifest["phase"] = phase;

    std::string payload;
    OrderedJson tensors = OrderedJson::array();
    auto add_tensor = [&](const std::string& name, const Shape& shape,
                          const std::vector<double>& data, bool frozen, const char* kind) {
        OrderedJson entry;
        entry["name"] = name;
        entry["shape"] = shape;
        entry["dtype"] = "f64";
        entry["offset"] = payload.size();
        entry["frozen"] = frozen;
        entry["kind"] = kind;
        tensors.push_back(std::move(entry));
        append_doubles(payload, data);
    };

    for (const auto& [name, entry] : store.entries()) {
        add_tensor(name, entry.tensor.shape(), entry.tensor.data(), entry.frozen, "param");
    }
    if (trainer) {
        auto add_adam_moments = [&](const char* tag, const AdamState& state) {
            for (const auto& [name, m] : state.m) {
                add_tensor(std::string("opt.") + tag + ".m." + name, {m.size()}, m, false, "opt");
            }
            for (const auto& [name, v] : state.v) {
                add_tensor(std::string("opt.") + tag + ".v." + name, {v.size()}, v, false, "opt");
            }
        };
        add_adam_moments("cl", trainer->model_adam_cl);
        add_adam_moments("cm", trainer->model_adam_cm);
        add_adam_moments("disc", trainer->disc_adam);

        OrderedJson tj;
        tj["rng_state"] = trainer->rng_state;
        tj["rng_seeded"] = trainer->rng_seeded;
        tj["cl_step"] = trainer->cl_step;
        tj["cm_step"] = trainer->cm_step;
        tj["adam_cl"] = adam_to_json(trainer->model_adam_cl);
        tj["adam_cm"] = adam_to_json(trainer->model_adam_cm);
        tj["adam_disc"] = adam_to_json(trainer->disc_adam);
        manifest["trainer"] = std::move(tj);
    } else {
        manifest["trainer"] = nullptr;
    }
    manifest["tensors"] = std::move(tensors);
    manifest["payload_checksum"] = hex64(fnv1a_bytes(payload.data(), payload.size()));

    std::string manifest_text = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(kMagic, sizeof kMagic);
    std::uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    std::uint64_t manifest_len = manifest_text.size();
    out.write(reinterpret_cast<const char*>(&manifest_len), sizeof manifest_len);
    out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("failed writing " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[5];
    in.read(magic, sizeof magic);
    if (in.gcount() != sizeof magic || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw BadMagic("not a DASD1 checkpoint: " + path);
    }
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (!in || version != kVersion) throw BadMagic("unsupported checkpoint version");
    std::uint64_t manifest_len = 0;
    in.read(reinterpret_cast<char*>(&manifest_len), sizeof manifest_len);
    if (!in) throw TruncatedPayload("checkpoint header truncated");
    std::string manifest_text(manifest_len, '\0');
    in.read(manifest_text.data(), static_cast<std::streamsize>(manifest_len));
    if (in.gcount() != static_cast<std::streamsize>(manifest_len)) {
        throw TruncatedPayload("checkpoint manifest truncated");
    }
    OrderedJson manifest = OrderedJson::parse(manifest_text, nullptr, false);
    if (manifest.is_discarded()) throw ManifestMismatch("manifest is not valid JSON");

    std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::string expected_checksum = manifest.at("payload_checksum").get<std::string>();
    if (hex64(fnv1a_bytes(payload.data(), payload.size())) != expected_checksum) {
        throw ManifestMismatch("payload checksum mismatch (corrupt or truncated payload)");
    }

    CheckpointData data;
    data.config_hash = std::stoull(manifest.at("config_hash").get<std::string>(), nullptr, 16);
    data.phase = manifest.at("phase").get<std::string>();

    auto read_doubles = [&](std::size_t offset, std::size_t count) {
        if (offset + count * sizeof(double) > payload.size()) {
            throw TruncatedPayload("tensor payload out of range");
        }
        std::vector<double> out(count);
        std::memcpy(out.data(), payload.data() + offset, count * sizeof(double));
        return out;
    };

    std::map<std::string, std::vector<double>> opt_tensors;
    std::size_t last_end = 0;
    for (const auto& entry : manifest.at("tensors")) {
        std::string name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        if (entry.at("dtype").get<std::string>() != "f64") {
            throw ManifestMismatch("unsupported dtype for " + name);
        }
        std::size_t offset = entry.at("offset").get<std::size_t>();
        if (offset < last_end) throw ManifestMismatch("overlapping tensor offsets");
        std::vector<double> values = read_doubles(offset, numel(shape));
        last_end = offset + numel(shape) * sizeof(double);
        if (entry.at("kind").get<std::string>() == "opt") {
            opt_tensors[name] = std::move(values);
        } else {
            bool frozen = entry.at("frozen").get<bool>();
            data.store.insert(name, Tensor::from_data(shape, std::move(values)), frozen);
        }
    }

    if (!manifest.at("trainer").is_null()) {
        TrainerState trainer;
        const auto& tj = manifest.at("trainer");
        trainer.rng_state = tj.at("rng_state").get<std::uint64_t>();
        trainer.rng_seeded = tj.at("rng_seeded").get<bool>();
        trainer.cl_step = tj.at("cl_step").get<std::size_t>();
        trainer.cm_step = tj.at("cm_step").get<std::size_t>();
        adam_from_json(tj.at("adam_cl"), trainer.model_adam_cl);
        adam_from_json(tj.at("adam_cm"), trainer.model_adam_cm);
        adam_from_json(tj.at("adam_disc"), trainer.disc_adam);
        for (auto& [name, values] : opt_tensors) {
            // opt.<tag>.<m|v>.<param>
            std::size_t tag_end = name.find('.', 4);
            std::string tag = name.substr(4, tag_end - 4);
            char which = name[tag_end + 1];
            std::string param = name.substr(tag_end + 3);
            AdamState& state = tag == "cl" ? trainer.model_adam_cl
                               : tag == "cm" ? trainer.model_adam_cm
                                             : trainer.disc_adam;
            (which == 'm' ? state.m : state.v)[param] = std::move(values);
        }
        data.trainer = std::move(trainer);
    }
    return data;
}

}  // namespace dasd
