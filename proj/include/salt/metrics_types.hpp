#pragma once

#include <array>
#include <string>

#include "layout.hpp"

namespace salt {

struct ClassDef {
    std::string name;        // shape word
    std::string color_name;  // color word
    std::array<double, 3> rgb;
};

struct Detection {
    std::string class_name;
    BBox box;
    double score = 0;  // in [0,1]
};

}  // namespace salt
