# Urban Form Taxonomy: numerical taxonomy of urban tissues from building footprints and streets
__version__ = "0.1.0"
