#include "sfseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace sfseg {
namespace {

constexpr char kMagic[8] = {'S', 'F', 'S', 'E', 'G', 'C', 'K', '\n'};
constexpr std::uint32_t kVersion = 1;

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw CheckpointError("checkpoint truncated while reading length field");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    nlohmann::json header;
    header["arch"] = model.arch;
    header["step_count"] = model.step_count;
    nlohmann::json table = nlohmann::json::array();
    auto params = model.named_parameters();
    for (const auto& [name, tensor] : params) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = std::vector<std::int64_t>(tensor.sizes().begin(), tensor.sizes().end());
        table.push_back(std::move(entry));
    }
    header["params"] = std::move(table);
    const std::string header_str = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, sizeof(kMagic));
    write_u64(os, kVersion);
    write_u64(os, header_str.size());
    os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, tensor] : params) {
        auto flat = tensor.detach().to(torch::kFloat32).contiguous();
        os.write(reinterpret_cast<const char*>(flat.data_ptr<float>()),
                 static_cast<std::streamsize>(flat.numel() * sizeof(float)));
    }
    if (!os) throw CheckpointError("write failed for checkpoint: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path,
                      const std::optional<ArchSpec>& expect) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path.string());
    char magic[sizeof(kMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("bad checkpoint magic in " + path.string());
    const std::uint64_t version = read_u64(is);
    if (version != kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const std::uint64_t header_len = read_u64(is);
    std::string header_str(header_len, '\0');
    is.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!is) throw CheckpointError("checkpoint truncated inside header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    ArchSpec arch = header.at("arch").get<ArchSpec>();
    arch.validate();
    if (expect && !(arch == *expect))
        throw ShapeError("checkpoint arch incompatible with expected arch (dims " +
                         std::to_string(arch.dims) + " vs " + std::to_string(expect->dims) +
                         ", levels " + std::to_string(arch.levels) + " vs " +
                         std::to_string(expect->levels) + ")");

    Model model = build_model(arch, /*seed=*/0);
    model.step_count = header.at("step_count").get<std::int64_t>();

    auto params = model.named_parameters();
    const auto& table = header.at("params");
    if (table.size() != params.size())
        throw CheckpointError("checkpoint parameter table size mismatch");
    torch::NoGradGuard guard;
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& entry = table.at(i);
        if (entry.at("name").get<std::string>() != params[i].first)
            throw CheckpointError("checkpoint parameter name mismatch at index " +
                                  std::to_string(i));
        auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
        auto& tensor = params[i].second;
        if (shape != std::vector<std::int64_t>(tensor.sizes().begin(), tensor.sizes().end()))
            throw CheckpointError("checkpoint parameter shape mismatch for " + params[i].first);
        std::vector<float> buf(static_cast<size_t>(tensor.numel()));
        is.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!is) throw CheckpointError("checkpoint truncated inside payload of " + params[i].first);
        tensor.copy_(torch::from_blob(buf.data(), tensor.sizes(), torch::kFloat32));
    }
    return model;
}

}  // namespace sfseg
