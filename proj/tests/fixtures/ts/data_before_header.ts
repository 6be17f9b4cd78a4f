@problemName bad
1.0,2.0:a
@data
