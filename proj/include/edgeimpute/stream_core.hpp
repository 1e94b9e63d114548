#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "edgeimpute/error.hpp"

namespace edgeimpute
{

using DeviceId = std::uint32_t;
using Tick = std::int64_t;

// One timestamped M-dimensional vector reported by one device. Masked cells
// carry no meaning; their numeric slot is never read by the library.
class DeviceReport
{
  public:
    DeviceReport(DeviceId device, Tick timestamp, std::vector<double> values,
                 std::vector<bool> missing) :
        device_(device), timestamp_(timestamp), values_(std::move(values)),
        missing_(std::move(missing))
    {
        if (values_.empty())
            throw Error(ErrorCode::schema, "report must carry at least one dimension");
        if (values_.size() != missing_.size())
            throw Error(ErrorCode::schema, "values and missing mask differ in length");
    }

    DeviceReport(DeviceId device, Tick timestamp, std::vector<double> values) :
        DeviceReport(device, timestamp, values, std::vector<bool>(values.size(), false))
    {
    }

    DeviceId device() const noexcept { return device_; }
    Tick timestamp() const noexcept { return timestamp_; }
    std::size_t dims() const noexcept { return values_.size(); }

    bool is_missing(std::size_t dim) const { return missing_.at(dim); }

    std::optional<double> value(std::size_t dim) const
    {
        if (missing_.at(dim))
            return std::nullopt;
        return values_[dim];
    }

    // Unchecked access for hot loops; the caller has already consulted the mask.
    double raw(std::size_t dim) const noexcept { return values_[dim]; }

    const std::vector<bool>& missing_mask() const noexcept { return missing_; }
    const std::vector<double>& values() const noexcept { return values_; }

    std::size_t missing_count() const noexcept
    {
        std::size_t n = 0;
        for (bool m : missing_)
            n += m ? 1 : 0;
        return n;
    }

    // Copy with one cell replaced (and unmasked).
    DeviceReport with_value(std::size_t dim, double v) const
    {
        if (dim >= values_.size())
            throw Error(ErrorCode::bounds, "dimension out of range");
        auto values = values_;
        auto missing = missing_;
        values[dim] = v;
        missing[dim] = false;
        return DeviceReport(device_, timestamp_, std::move(values), std::move(missing));
    }

    // Copy with one cell masked.
    DeviceReport with_missing(std::size_t dim) const
    {
        if (dim >= values_.size())
            throw Error(ErrorCode::bounds, "dimension out of range");
        auto values = values_;
        auto missing = missing_;
        values[dim] = 0.0;
        missing[dim] = true;
        return DeviceReport(device_, timestamp_, std::move(values), std::move(missing));
    }

  private:
    DeviceId device_;
    Tick timestamp_;
    std::vector<double> values_;
    std::vector<bool> missing_;
};

// Unmasked values of one dimension over a device's window. `positions` index
// into the window (0 = oldest stored report); `span` is the window length the
// positions refer to.
struct StreamSlice
{
    DeviceId device{0};
    std::size_t dimension{0};
    std::vector<double> values;
    std::vector<std::size_t> positions;
    std::size_t span{0};

    std::size_t size() const noexcept { return values.size(); }
    bool empty() const noexcept { return values.empty(); }
};

// Per-device ring buffer of the W most recent reports.
class WindowStore
{
  public:
    using Buffer = std::deque<DeviceReport>;

    explicit WindowStore(std::size_t capacity) : capacity_(capacity)
    {
        if (capacity_ == 0)
            throw Error(ErrorCode::config, "window capacity must be at least 1");
    }

    std::size_t capacity() const noexcept { return capacity_; }

    // 0 until the first report fixes the dimensionality of the store.
    std::size_t dims() const noexcept { return dims_; }

    void ingest(DeviceReport report)
    {
        if (dims_ != 0 && report.dims() != dims_)
            throw Error(ErrorCode::schema, "report dimensionality " + std::to_string(report.dims()) +
                                               " does not match store dimensionality " +
                                               std::to_string(dims_));
        auto& buffer = buffers_[report.device()];
        if (!buffer.empty() && report.timestamp() <= buffer.back().timestamp())
            throw Error(ErrorCode::sequencing,
                        "device " + std::to_string(report.device()) + ": timestamp " +
                            std::to_string(report.timestamp()) + " is not after " +
                            std::to_string(buffer.back().timestamp()));
        dims_ = report.dims();
        if (buffer.size() == capacity_)
            buffer.pop_front();
        buffer.push_back(std::move(report));
    }

    // Swap the newest report of its device for an updated copy with the same
    // timestamp. Used to feed a scored value back into the window.
    void replace_latest(DeviceReport report)
    {
        auto it = buffers_.find(report.device());
        if (it == buffers_.end() || it->second.empty())
            throw Error(ErrorCode::not_found, "unknown device " + std::to_string(report.device()));
        if (it->second.back().timestamp() != report.timestamp() || report.dims() != dims_)
            throw Error(ErrorCode::sequencing, "replacement does not match the newest report");
        it->second.back() = std::move(report);
    }

    bool contains(DeviceId device) const
    {
        auto it = buffers_.find(device);
        return it != buffers_.end() && !it->second.empty();
    }

    const DeviceReport& latest(DeviceId device) const
    {
        auto it = buffers_.find(device);
        if (it == buffers_.end() || it->second.empty())
            throw Error(ErrorCode::not_found, "unknown device " + std::to_string(device));
        return it->second.back();
    }

    // Empty buffer for devices that never reported.
    const Buffer& buffer(DeviceId device) const
    {
        static const Buffer empty;
        auto it = buffers_.find(device);
        return it == buffers_.end() ? empty : it->second;
    }

    std::size_t size(DeviceId device) const { return buffer(device).size(); }

    StreamSlice window(DeviceId device, std::size_t dimension) const
    {
        StreamSlice slice;
        slice.device = device;
        slice.dimension = dimension;
        if (dims_ != 0 && dimension >= dims_)
            throw Error(ErrorCode::bounds, "dimension " + std::to_string(dimension) +
                                               " out of range for M=" + std::to_string(dims_));
        const auto& buf = buffer(device);
        slice.span = buf.size();
        for (std::size_t pos = 0; pos < buf.size(); ++pos)
        {
            if (buf[pos].is_missing(dimension))
                continue;
            slice.values.push_back(buf[pos].raw(dimension));
            slice.positions.push_back(pos);
        }
        return slice;
    }

    // Ascending device ids with at least one stored report.
    std::vector<DeviceId> devices() const
    {
        std::vector<DeviceId> ids;
        ids.reserve(buffers_.size());
        for (const auto& [id, buf] : buffers_)
            if (!buf.empty())
                ids.push_back(id);
        return ids;
    }

  private:
    std::size_t capacity_;
    std::size_t dims_{0};
    std::map<DeviceId, Buffer> buffers_;
};

} // namespace edgeimpute
