# ML package
