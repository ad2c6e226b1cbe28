#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.
