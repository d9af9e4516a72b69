#include "fedmeta/param_vector.hpp"

#include <sstream>

namespace fedmeta {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

Layout::Layout(std::vector<Segment> segments) : segments_(std::move(segments)) {
    offsets_.reserve(segments_.size());
    for (const auto& seg : segments_) {
        offsets_.push_back(total_);
        total_ += seg.size();
    }
}

std::optional<std::size_t> Layout::find(const std::string& name) const {
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        if (segments_[i].name == name) return i;
    }
    return std::nullopt;
}

Layout Layout::appended(const Layout& other) const {
    std::vector<Segment> merged = segments_;
    for (const auto& seg : other.segments_) {
        require(!find(seg.name).has_value(), ErrorKind::LayoutMismatch,
                "duplicate segment '" + seg.name + "'");
        merged.push_back(seg);
    }
    return Layout(std::move(merged));
}

}  // namespace fedmeta
