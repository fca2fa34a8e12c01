#pragma once

#include <stdexcept>
#include <string>

namespace floodcnn {

// Every failure raised by the library derives from Error. The category is
// what the CLI maps onto its exit code.
class Error : public std::runtime_error {
public:
    enum class Category { data, numerical };

    Error(Category category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    Category category() const noexcept { return category_; }

private:
    Category category_;
};

#define FLOODCNN_DATA_ERROR(Name)                                              \
    class Name : public Error {                                                \
    public:                                                                    \
        explicit Name(const std::string& what)                                 \
            : Error(Category::data, what) {}                                   \
    }

#define FLOODCNN_NUMERICAL_ERROR(Name)                                         \
    class Name : public Error {                                                \
    public:                                                                    \
        explicit Name(const std::string& what)                                 \
            : Error(Category::numerical, what) {}                              \
    }

FLOODCNN_DATA_ERROR(ParseError);
FLOODCNN_DATA_ERROR(DomainError);
FLOODCNN_DATA_ERROR(IndexError);
FLOODCNN_DATA_ERROR(AlignmentError);
FLOODCNN_DATA_ERROR(ShapeError);
FLOODCNN_DATA_ERROR(LoadError);
FLOODCNN_DATA_ERROR(ManifestError);
FLOODCNN_DATA_ERROR(ConfigError);
FLOODCNN_DATA_ERROR(SearchError);

FLOODCNN_NUMERICAL_ERROR(NumericalError);
FLOODCNN_NUMERICAL_ERROR(InstabilityError);
FLOODCNN_NUMERICAL_ERROR(DivergenceError);
FLOODCNN_NUMERICAL_ERROR(ConvergenceError);

#undef FLOODCNN_DATA_ERROR
#undef FLOODCNN_NUMERICAL_ERROR

}  // namespace floodcnn
