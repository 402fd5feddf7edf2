#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "sobolev_forge/net_core.hpp"

namespace sobolev_forge {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

namespace detail {

inline json matrix_to_json(const Matrix& m)
{
    return json{{"rows", m.rows()}, {"cols", m.cols()},
                {"data", std::vector<double>(m.data().begin(), m.data().end())}};
}

inline Matrix matrix_from_json(const json& j)
{
    const auto r = j.at("rows").get<std::size_t>();
    const auto c = j.at("cols").get<std::size_t>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != r * c)
        throw SerializationError("matrix data length " + std::to_string(data.size()) + " for " + shape_str(r, c));
    Matrix m(r, c);
    std::copy(data.begin(), data.end(), m.data().begin());
    return m;
}

inline json filter_to_json(const FilterTensor& f)
{
    return json{{"dims", {f.out_channels(), f.taps(), f.in_channels()}}, {"data", f.dense()}};
}

inline FilterTensor filter_from_json(const json& j)
{
    const auto dims = j.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 3)
        throw SerializationError("filter dims must have 3 entries");
    const auto data = j.at("data").get<std::vector<double>>();
    try {
        return FilterTensor::from_dense(dims[0], dims[1], dims[2], data);
    } catch (const ShapeError& e) {
        throw SerializationError(e.what());
    }
}

inline json layers_to_json(const std::vector<FilterTensor>& filters, const std::vector<Matrix>& biases)
{
    json fs = json::array();
    json bs = json::array();
    for (const auto& f : filters)
        fs.push_back(filter_to_json(f));
    for (const auto& b : biases)
        bs.push_back(matrix_to_json(b));
    return json{{"filters", fs}, {"biases", bs}};
}

inline void layers_from_json(const json& j, std::vector<FilterTensor>& filters, std::vector<Matrix>& biases)
{
    for (const auto& f : j.at("filters"))
        filters.push_back(filter_from_json(f));
    for (const auto& b : j.at("biases"))
        biases.push_back(matrix_from_json(b));
}

inline void check_version(const json& j)
{
    if (!j.contains("version"))
        throw SerializationError("missing \"version\" field");
    const auto& v = j.at("version");
    if (!v.is_number_integer() || v.get<int>() != kFormatVersion)
        throw SerializationError("unsupported format version " + v.dump() + ", expected " +
                                 std::to_string(kFormatVersion));
}

template <typename F>
auto guarded(F&& fn)
{
    try {
        return fn();
    } catch (const SerializationError&) {
        throw;
    } catch (const json::exception& e) {
        throw SerializationError(std::string("malformed network document: ") + e.what());
    } catch (const ShapeError& e) {
        throw SerializationError(std::string("inconsistent network document: ") + e.what());
    }
}

} // namespace detail

inline json to_json(const ConvResNetModel& net)
{
    json blocks = json::array();
    for (const auto& b : net.blocks)
        blocks.push_back(detail::layers_to_json(b.filters, b.biases));
    return json{{"version", kFormatVersion},
                {"D", net.input_dim},
                {"C", net.channels},
                {"blocks", blocks},
                {"fc", {{"weight", detail::matrix_to_json(net.fc_weight)}, {"bias", net.fc_bias}}},
                {"first_row_only", net.first_row_only}};
}

inline ConvResNetModel resnet_from_json(const json& j)
{
    return detail::guarded([&] {
        detail::check_version(j);
        if (j.contains("kind") && j.at("kind") != "resnet")
            throw SerializationError("document kind " + j.at("kind").dump() + " is not a resnet");
        ConvResNetModel net;
        net.input_dim = j.at("D").get<std::size_t>();
        net.channels = j.at("C").get<std::size_t>();
        for (const auto& bj : j.at("blocks")) {
            ResidualBlockSpec b;
            detail::layers_from_json(bj, b.filters, b.biases);
            net.blocks.push_back(std::move(b));
        }
        net.fc_weight = detail::matrix_from_json(j.at("fc").at("weight"));
        net.fc_bias = j.at("fc").at("bias").get<double>();
        net.first_row_only = j.at("first_row_only").get<bool>();
        validate(net);
        return net;
    });
}

inline json to_json(const MlpModel& mlp)
{
    json layers = json::array();
    for (std::size_t l = 0; l < mlp.weights.size(); ++l)
        layers.push_back({{"weight", detail::matrix_to_json(mlp.weights[l])}, {"bias", mlp.biases[l]}});
    return json{{"version", kFormatVersion}, {"kind", "mlp"}, {"layers", layers}};
}

inline MlpModel mlp_from_json(const json& j)
{
    return detail::guarded([&] {
        detail::check_version(j);
        MlpModel mlp;
        for (const auto& lj : j.at("layers")) {
            mlp.weights.push_back(detail::matrix_from_json(lj.at("weight")));
            mlp.biases.push_back(lj.at("bias").get<Vector>());
        }
        validate(mlp);
        return mlp;
    });
}

/// Dumps with round-trip exact doubles (nlohmann emits shortest repr).
inline std::string dump_json(const json& j, int indent = -1)
{
    return j.dump(indent);
}

/// Writes to `path` via a sibling temporary file and rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw SerializationError("cannot open " + tmp.string() + " for writing");
        out << content;
        if (!out)
            throw SerializationError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline json read_json_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw SerializationError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw SerializationError("corrupt JSON in " + path.string() + ": " + e.what());
    }
}

inline void save_resnet(const ConvResNetModel& net, const std::filesystem::path& path)
{
    write_file_atomic(path, dump_json(to_json(net)));
}

inline ConvResNetModel load_resnet(const std::filesystem::path& path)
{
    return resnet_from_json(read_json_file(path));
}

} // namespace sobolev_forge
