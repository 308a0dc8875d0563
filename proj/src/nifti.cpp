#include <cstring>
#include <fstream>
#include <vector>

#include <zlib.h>

#include "sfseg/data.hpp"

namespace sfseg {
namespace {

// The fields of the 348-byte NIfTI-1 header this reader cares about.
struct NiftiHeader {
    std::int32_t sizeof_hdr;
    char pad0[36];
    std::int16_t dim[8];
    char pad1[14];
    std::int16_t datatype;
    std::int16_t bitpix;
    char pad2[2];
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    char pad3[224];
    char magic[4];
};
static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;
constexpr std::int16_t kDtUint16 = 512;

std::vector<char> read_all(const std::filesystem::path& path) {
    // gzread transparently handles both gzip-compressed and plain files.
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw DataError("cannot open volume file: " + path.string());
    std::vector<char> out;
    char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
    const bool bad = n < 0;
    gzclose(f);
    if (bad) throw DataError("decompression failed for: " + path.string());
    return out;
}

}  // namespace

torch::Tensor read_nifti(const std::filesystem::path& path) {
    auto bytes = read_all(path);
    if (bytes.size() < sizeof(NiftiHeader))
        throw DataError("file too small for a NIfTI header: " + path.string());
    NiftiHeader hdr;
    std::memcpy(&hdr, bytes.data(), sizeof(hdr));
    if (hdr.sizeof_hdr != 348 || std::strncmp(hdr.magic, "n+1", 3) != 0)
        throw DataError("not a single-file NIfTI-1 volume: " + path.string());
    if (hdr.dim[0] != 3)
        throw DataError("expected a 3D volume in " + path.string() + ", got dim[0]=" +
                        std::to_string(hdr.dim[0]));
    const std::int64_t nx = hdr.dim[1], ny = hdr.dim[2], nz = hdr.dim[3];
    const std::int64_t numel = nx * ny * nz;
    const std::size_t offset = static_cast<std::size_t>(hdr.vox_offset);
    const std::size_t elem = static_cast<std::size_t>(hdr.bitpix) / 8;
    if (bytes.size() < offset + static_cast<std::size_t>(numel) * elem)
        throw DataError("NIfTI payload truncated in " + path.string());

    // Voxels are stored x-fastest, so the flat buffer maps onto (z, y, x).
    const char* payload = bytes.data() + offset;
    torch::Tensor vol;
    const auto shape = std::vector<std::int64_t>{nz, ny, nx};
    switch (hdr.datatype) {
        case kDtUint8:
            vol = torch::from_blob(const_cast<char*>(payload), shape, torch::kUInt8).clone();
            break;
        case kDtInt16:
            vol = torch::from_blob(const_cast<char*>(payload), shape, torch::kInt16).clone();
            break;
        case kDtUint16: {
            std::vector<std::int32_t> widened(static_cast<std::size_t>(numel));
            const auto* src = reinterpret_cast<const std::uint16_t*>(payload);
            for (std::int64_t i = 0; i < numel; ++i) widened[static_cast<std::size_t>(i)] = src[i];
            vol = torch::from_blob(widened.data(), shape, torch::kInt32).clone();
            break;
        }
        case kDtInt32:
            vol = torch::from_blob(const_cast<char*>(payload), shape, torch::kInt32).clone();
            break;
        case kDtFloat32:
            vol = torch::from_blob(const_cast<char*>(payload), shape, torch::kFloat32).clone();
            break;
        case kDtFloat64:
            vol = torch::from_blob(const_cast<char*>(payload), shape, torch::kFloat64).clone();
            break;
        default:
            throw DataError("unsupported NIfTI datatype " + std::to_string(hdr.datatype) +
                            " in " + path.string());
    }
    if (hdr.scl_slope != 0.0f && (hdr.scl_slope != 1.0f || hdr.scl_inter != 0.0f))
        vol = vol.to(torch::kFloat32) * hdr.scl_slope + hdr.scl_inter;
    return vol;
}

void write_nifti(const std::filesystem::path& path, const torch::Tensor& volume) {
    if (volume.dim() != 3) throw DataError("write_nifti expects a (D,H,W) tensor");
    NiftiHeader hdr{};
    hdr.sizeof_hdr = 348;
    hdr.dim[0] = 3;
    hdr.dim[1] = static_cast<std::int16_t>(volume.size(2));  // x
    hdr.dim[2] = static_cast<std::int16_t>(volume.size(1));  // y
    hdr.dim[3] = static_cast<std::int16_t>(volume.size(0));  // z
    for (int i = 4; i < 8; ++i) hdr.dim[i] = 1;
    for (int i = 0; i < 8; ++i) hdr.pixdim[i] = 1.0f;
    hdr.vox_offset = 352.0f;
    hdr.scl_slope = 1.0f;
    hdr.scl_inter = 0.0f;
    std::memcpy(hdr.magic, "n+1", 4);

    torch::Tensor payload;
    if (volume.dtype() == torch::kFloat32 || volume.dtype() == torch::kFloat64) {
        hdr.datatype = kDtFloat32;
        hdr.bitpix = 32;
        payload = volume.to(torch::kFloat32).contiguous();
    } else {
        hdr.datatype = kDtInt16;
        hdr.bitpix = 16;
        payload = volume.to(torch::kInt16).contiguous();
    }
    const std::size_t payload_bytes =
        static_cast<std::size_t>(payload.numel()) * static_cast<std::size_t>(hdr.bitpix / 8);
    const char zeros[4] = {0, 0, 0, 0};

    const bool gz = path.extension() == ".gz";
    if (gz) {
        gzFile f = gzopen(path.string().c_str(), "wb");
        if (!f) throw DataError("cannot open for writing: " + path.string());
        bool ok = gzwrite(f, &hdr, sizeof(hdr)) == static_cast<int>(sizeof(hdr));
        ok = ok && gzwrite(f, zeros, 4) == 4;
        ok = ok && gzwrite(f, payload.data_ptr(), static_cast<unsigned>(payload_bytes)) ==
                       static_cast<int>(payload_bytes);
        gzclose(f);
        if (!ok) throw DataError("write failed for: " + path.string());
    } else {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write(reinterpret_cast<const char*>(&hdr), sizeof(hdr));
        os.write(zeros, 4);
        os.write(static_cast<const char*>(payload.data_ptr()),
                 static_cast<std::streamsize>(payload_bytes));
        if (!os) throw DataError("write failed for: " + path.string());
    }
}

}  // namespace sfseg
