#include "saicl/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "saicl/error.hpp"

namespace saicl {

namespace {
constexpr char kMagic[8] = {'S', 'A', 'I', 'C', 'L', 'C', 'K', '1'};

nlohmann::json array_index(const std::map<std::string, Tensor>& arrays) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [name, t] : arrays) out.push_back({{"name", name}, {"shape", t.shape()}});
    return out;
}
} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::json header = {{"encoder", encoder_to_json(ckpt.encoder)},
                             {"schema", schema_to_json(ckpt.schema)},
                             {"task", task_to_json(ckpt.task)},
                             {"head", head_name(ckpt.head)},
                             {"run_config", ckpt.run_config},
                             {"params", array_index(ckpt.store.params)},
                             {"buffers", array_index(ckpt.store.buffers)}};
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io_error", "cannot write checkpoint '" + path + "'");
    out.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    auto write_arrays = [&](const std::map<std::string, Tensor>& arrays) {
        for (const auto& [_, t] : arrays)
            out.write(reinterpret_cast<const char*>(t.data()),
                      static_cast<std::streamsize>(t.size() * sizeof(double)));
    };
    write_arrays(ckpt.store.params);
    write_arrays(ckpt.store.buffers);
    if (!out) throw Error("io_error", "short write for checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    if (!std::filesystem::exists(path))
        throw Error("checkpoint_not_found", "no checkpoint at '" + path + "'");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("checkpoint_not_found", "cannot open checkpoint '" + path + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw Error("checkpoint_corrupt", "bad magic in '" + path + "'");
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw Error("checkpoint_corrupt", "truncated header in '" + path + "'");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw Error("checkpoint_corrupt", e.what());
    }
    Checkpoint ckpt;
    try {
        ckpt.encoder = encoder_from_json(header.at("encoder"));
        ckpt.schema = schema_from_json(header.at("schema"));
        ckpt.task = task_from_json(header.at("task"));
        ckpt.head = head_from_name(header.at("head").get<std::string>());
        ckpt.run_config = header.at("run_config");
        auto read_arrays = [&](const nlohmann::json& index, std::map<std::string, Tensor>& arrays) {
            for (const auto& entry : index) {
                const std::string name = entry.at("name").get<std::string>();
                const auto shape = entry.at("shape").get<std::vector<int64_t>>();
                Tensor t(shape);
                in.read(reinterpret_cast<char*>(t.data()),
                        static_cast<std::streamsize>(t.size() * sizeof(double)));
                if (!in) throw Error("checkpoint_corrupt", "truncated payload in '" + path + "'");
                arrays.emplace(name, std::move(t));
            }
        };
        read_arrays(header.at("params"), ckpt.store.params);
        read_arrays(header.at("buffers"), ckpt.store.buffers);
    } catch (const nlohmann::json::exception& e) {
        throw Error("checkpoint_corrupt", e.what());
    }
    return ckpt;
}

} // namespace saicl
